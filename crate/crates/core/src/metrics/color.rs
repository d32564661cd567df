//! sRGB → CIE Lab conversion and the CIEDE2000 colour difference.

use libm::{atan2, cbrt, cos, exp, pow, sin, sqrt};

use super::check_same;
use crate::error::Result;
use crate::image::Image;

/// CIE L*a*b* coordinates relative to D65.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Lab { l, a, b }
    }
}

// D65 reference white, Y normalized to 1.
const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn linearize(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.040_45 {
        v / 12.92
    } else {
        pow((v + 0.055) / 1.055, 2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        cbrt(t)
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB in [0, 1] → linear RGB → XYZ (D65) → Lab.
pub fn srgb_to_lab(rgb: [f64; 3]) -> Lab {
    let [r, g, b] = rgb.map(linearize);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

fn hue_deg(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = atan2(b, a).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// CIEDE2000 difference with kL = kC = kH = 1.
pub fn ciede2000(p: Lab, q: Lab) -> f64 {
    const POW25_7: f64 = 6_103_515_625.0;
    let c1 = sqrt(p.a * p.a + p.b * p.b);
    let c2 = sqrt(q.a * q.a + q.b * q.b);
    let c_bar7 = pow((c1 + c2) / 2.0, 7.0);
    let g = 0.5 * (1.0 - sqrt(c_bar7 / (c_bar7 + POW25_7)));
    let a1 = (1.0 + g) * p.a;
    let a2 = (1.0 + g) * q.a;
    let c1p = sqrt(a1 * a1 + p.b * p.b);
    let c2p = sqrt(a2 * a2 + q.b * q.b);
    let h1p = hue_deg(p.b, a1);
    let h2p = hue_deg(q.b, a2);

    let dl = q.l - p.l;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let dh_deg = if chroma_product == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * sqrt(chroma_product) * sin((dh_deg / 2.0).to_radians());

    let l_bar = (p.l + q.l) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_bar = if chroma_product == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };

    let t = 1.0 - 0.17 * cos((h_bar - 30.0).to_radians())
        + 0.24 * cos((2.0 * h_bar).to_radians())
        + 0.32 * cos((3.0 * h_bar + 6.0).to_radians())
        - 0.20 * cos((4.0 * h_bar - 63.0).to_radians());
    let l50 = (l_bar - 50.0) * (l_bar - 50.0);
    let sl = 1.0 + 0.015 * l50 / sqrt(20.0 + l50);
    let sc = 1.0 + 0.045 * c_bar_p;
    let sh = 1.0 + 0.015 * c_bar_p * t;
    let d_theta = 30.0 * exp(-((h_bar - 275.0) / 25.0) * ((h_bar - 275.0) / 25.0));
    let c_bar_p7 = pow(c_bar_p, 7.0);
    let rc = 2.0 * sqrt(c_bar_p7 / (c_bar_p7 + POW25_7));
    let rt = -sin((2.0 * d_theta).to_radians()) * rc;

    let (tl, tc, th) = (dl / sl, dc / sc, dh / sh);
    sqrt(tl * tl + tc * tc + th * th + rt * tc * th)
}

/// Mean per-pixel CIEDE2000 between two sRGB images.
pub fn delta_e2000(a: &Image, b: &Image) -> Result<f64> {
    check_same("delta_e2000", a, b)?;
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let pa = a.pixel(y, x).map(|v| v as f64);
            let pb = b.pixel(y, x).map(|v| v as f64);
            sum += ciede2000(srgb_to_lab(pa), srgb_to_lab(pb));
        }
    }
    Ok(sum / (a.height() * a.width()) as f64)
}
