//! PNG storage for light fields and single-channel maps.
//!
//! Two on-disk light-field layouts are understood:
//!
//! * a micro-lens PNG `name.png` with a sidecar `name.txt` holding
//!   `u = <U>` and `v = <V>` lines;
//! * a directory of `view_<u>_<v>.png` sub-aperture images.
//!
//! 8-bit samples map to `[0, 1]` by division by 255; writers round.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage as Rgb8};

use super::{mla_from_sai, sai_from_mla, LightField, MicroLensImage, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a light field is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Mla,
    SaiDir,
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::Mla => "mla",
            LayoutKind::SaiDir => "sai-dir",
        }
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| format_err(path, e))
}

#[inline]
fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 255.0;
        }
    }
    RgbImage::new(w, h, data)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf: Rgb8 = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| to_u8(img.get(c, y, x))))
    });
    buf.save(path).map_err(|e| format_err(path, e))
}

/// Reads a grayscale PNG as a `[1, H, W]` tensor in `[0, 1]`. Colour
/// images are converted to luma first.
pub fn read_gray_png(path: &Path) -> Result<Tensor> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect();
    Tensor::new(vec![1, h, w], data)
}

/// Writes an `H × W` map (any tensor whose last two axes are `H, W` and
/// leading axes are 1) as 8-bit grayscale, `round(255·x)`.
pub fn write_gray_png(path: &Path, map: &Tensor) -> Result<()> {
    let shape = map.shape();
    let (h, w) = match shape {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        _ => return Err(Error::dim(format!("cannot write shape {shape:?} as a gray image"))),
    };
    let raw = map.data().iter().map(|&x| to_u8(x)).collect();
    let buf: GrayImage =
        ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    buf.save(path).map_err(|e| format_err(path, e))
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("txt")
}

/// Parses `u = 9` / `v = 9` lines; keys are case-insensitive and `#` starts a comment.
pub fn parse_sidecar(text: &str) -> Result<(usize, usize)> {
    let (mut u, mut v) = (None, None);
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::Format(format!("sidecar line `{line}` is not key = value")))?;
        let n: usize = val
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("sidecar value `{}` is not an integer", val.trim())))?;
        match key.trim().to_ascii_lowercase().as_str() {
            "u" => u = Some(n),
            "v" => v = Some(n),
            other => return Err(Error::Format(format!("unknown sidecar key `{other}`"))),
        }
    }
    match (u, v) {
        (Some(u), Some(v)) if u > 0 && v > 0 => Ok((u, v)),
        _ => Err(Error::Format("sidecar must declare positive u and v".into())),
    }
}

pub fn read_mla(png: &Path) -> Result<MicroLensImage> {
    let side = sidecar_path(png);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let block = parse_sidecar(&text).map_err(|e| format_err(&side, e))?;
    MicroLensImage::new(read_rgb_png(png)?, block)
}

pub fn write_mla(png: &Path, mla: &MicroLensImage) -> Result<()> {
    write_rgb_png(png, mla.image())?;
    let (u, v) = mla.block();
    let side = sidecar_path(png);
    fs::write(&side, format!("u = {u}\nv = {v}\n")).map_err(|e| Error::io(&side, e))
}

fn parse_view_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("view_")?.strip_suffix(".png")?;
    let (u, v) = rest.split_once('_')?;
    Some((u.parse().ok()?, v.parse().ok()?))
}

pub fn read_view_dir(dir: &Path) -> Result<LightField> {
    let mut views = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(uv) = entry.file_name().to_str().and_then(parse_view_name) {
            views.insert(uv, entry.path());
        }
    }
    if views.is_empty() {
        return Err(format_err(dir, "no view_<u>_<v>.png files"));
    }
    let nu = views.keys().map(|k| k.0).max().unwrap_or(0) + 1;
    let nv = views.keys().map(|k| k.1).max().unwrap_or(0) + 1;
    if views.len() != nu * nv {
        return Err(format_err(
            dir,
            format!("found {} views, a {nu}x{nv} grid needs {}", views.len(), nu * nv),
        ));
    }
    let images = views
        .values()
        .map(|p| read_rgb_png(p))
        .collect::<Result<Vec<_>>>()?;
    LightField::from_views((nu, nv), &images).map_err(|e| format_err(dir, e))
}

pub fn write_view_dir(dir: &Path, lf: &LightField) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (nu, nv) = lf.angular();
    for u in 0..nu {
        for v in 0..nv {
            write_rgb_png(&dir.join(format!("view_{u}_{v}.png")), &lf.view(u, v))?;
        }
    }
    Ok(())
}

/// Directories are view sets, anything else a micro-lens PNG.
pub fn detect_layout(path: &Path) -> LayoutKind {
    if path.is_dir() {
        LayoutKind::SaiDir
    } else {
        LayoutKind::Mla
    }
}

pub fn read_light_field(path: &Path) -> Result<LightField> {
    match detect_layout(path) {
        LayoutKind::SaiDir => read_view_dir(path),
        LayoutKind::Mla => {
            let mla = read_mla(path)?;
            let (u, v) = mla.block();
            sai_from_mla(&mla, u, v)
        }
    }
}

pub fn write_light_field(path: &Path, lf: &LightField, kind: LayoutKind) -> Result<()> {
    match kind {
        LayoutKind::SaiDir => write_view_dir(path, lf),
        LayoutKind::Mla => write_mla(path, &mla_from_sai(lf)),
    }
}
