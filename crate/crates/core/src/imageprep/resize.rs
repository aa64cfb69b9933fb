use crate::{Error, Result};

/// Output height of a normalized image.
pub const HEIGHT: usize = 144;
/// Output width of a normalized image.
pub const WIDTH: usize = 200;
pub const CHANNELS: usize = 3;
/// Values per normalized image.
pub const PIXELS: usize = CHANNELS * HEIGHT * WIDTH;

/// Placement of the scaled content inside the padded canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitGeometry {
    pub scaled_h: usize,
    pub scaled_w: usize,
    pub top: usize,
    pub left: usize,
}

impl FitGeometry {
    pub fn pad_bottom(&self, canvas_h: usize) -> usize {
        canvas_h - self.top - self.scaled_h
    }

    pub fn pad_right(&self, canvas_w: usize) -> usize {
        canvas_w - self.left - self.scaled_w
    }
}

/// Aspect-preserving fit of an `h × w` source into `canvas_h × canvas_w`.
///
/// The scale factor is `min(canvas_w / w, canvas_h / h)`; scaled extents are
/// rounded and kept at least one pixel. Padding is split evenly with the odd
/// pixel going to the bottom/right.
pub fn fit_geometry(h: usize, w: usize, canvas_h: usize, canvas_w: usize) -> Result<FitGeometry> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "image has zero extent ({h}×{w})"
        )));
    }
    let s = (canvas_w as f64 / w as f64).min(canvas_h as f64 / h as f64);
    let scaled_h = ((h as f64 * s).round() as usize).clamp(1, canvas_h);
    let scaled_w = ((w as f64 * s).round() as usize).clamp(1, canvas_w);
    Ok(FitGeometry {
        scaled_h,
        scaled_w,
        top: (canvas_h - scaled_h) / 2,
        left: (canvas_w - scaled_w) / 2,
    })
}

/// Source taps for one output coordinate under half-pixel-centre bilinear
/// sampling.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = x.floor() as usize;
            Tap {
                i0,
                i1: (i0 + 1).min(src - 1),
                frac: x - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize of a channel-major `[c, h, w]` plane stack.
pub fn resize_bilinear(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), c * h * w, "resize_bilinear: source length");
    resample(c, h, w, oh, ow, |ch, y, x| src[(ch * h + y) * w + x])
}

/// Bilinear resampling over any pixel accessor `at(channel, y, x)`.
fn resample(
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    at: impl Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let top = at(ch, y.i0, x.i0) + (at(ch, y.i0, x.i1) - at(ch, y.i0, x.i0)) * x.frac;
                let bot = at(ch, y.i1, x.i0) + (at(ch, y.i1, x.i1) - at(ch, y.i1, x.i0)) * x.frac;
                dst[oy * ow + ox] = top + (bot - top) * y.frac;
            }
        }
    }
    out
}

/// Normalizes an interleaved `h × w × 3` RGB byte grid to a channel-major
/// `(3, 144, 200)` signed tensor: aspect fit, bilinear scale, pad with 0,
/// and shift bytes by −128.
pub fn normalize_image(rgb: &[u8], h: usize, w: usize) -> Result<Vec<i8>> {
    normalize_to(rgb, h, w, HEIGHT, WIDTH)
}

/// [`normalize_image`] with an arbitrary canvas.
pub fn normalize_to(
    rgb: &[u8],
    h: usize,
    w: usize,
    canvas_h: usize,
    canvas_w: usize,
) -> Result<Vec<i8>> {
    let g = fit_geometry(h, w, canvas_h, canvas_w)?;
    if rgb.len() != h * w * CHANNELS {
        return Err(Error::Shape(format!(
            "RGB buffer has {} bytes, expected {h}×{w}×3 = {}",
            rgb.len(),
            h * w * CHANNELS
        )));
    }
    // Sample the interleaved bytes in place; only tapped pixels are read.
    let scaled = resample(CHANNELS, h, w, g.scaled_h, g.scaled_w, |c, y, x| {
        rgb[(y * w + x) * CHANNELS + c] as f64
    });
    let mut out = vec![0i8; CHANNELS * canvas_h * canvas_w];
    for c in 0..CHANNELS {
        for y in 0..g.scaled_h {
            for x in 0..g.scaled_w {
                let v = scaled[(c * g.scaled_h + y) * g.scaled_w + x]
                    .round()
                    .clamp(0.0, 255.0) as i16;
                out[(c * canvas_h + g.top + y) * canvas_w + g.left + x] = (v - 128) as i8;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a signed `(3, h, w)` tensor.
pub fn resize_signed(pixels: &[i8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<i8> {
    let src: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();
    resize_bilinear(&src, CHANNELS, h, w, oh, ow)
        .into_iter()
        .map(|v| v.round().clamp(-128.0, 127.0) as i8)
        .collect()
}
