//! Full-range 8-bit ITU-R BT.709 color conversion.
//!
//! ```text
//! Y  = KR*R + (1 - KR - KB)*G + KB*B
//! Cb = (B - Y) / (2 * (1 - KB)) + 128      = (B - Y) / 1.8556 + 128
//! Cr = (R - Y) / (2 * (1 - KR)) + 128      = (R - Y) / 1.5748 + 128
//! ```
//!
//! Outputs are clamped to `[0, 255]`. Saturated blues and reds map to Cb/Cr
//! slightly above 255 before clamping, which is where the round trip loses up
//! to one code value.

pub const KR: f64 = 0.2126;
pub const KB: f64 = 0.0722;
const KG: f64 = 1.0 - KR - KB;
const CB_SCALE: f64 = 2.0 * (1.0 - KB);
const CR_SCALE: f64 = 2.0 * (1.0 - KR);

pub fn rgb_to_ycbcr_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let cb = (b - y) / CB_SCALE + 128.0;
    let cr = (r - y) / CR_SCALE + 128.0;
    [y, cb, cr].map(|v| v.clamp(0.0, 255.0))
}

pub fn ycbcr_to_rgb_pixel([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let r = y + CR_SCALE * (cr - 128.0);
    let b = y + CB_SCALE * (cb - 128.0);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b].map(|v| v.clamp(0.0, 255.0))
}
