//! Background threshold, breast-region crop and resize.

/// Pixels darker than 40 of 255 grey levels are background.
pub const DEFAULT_THRESHOLD: f32 = 40.0 / 255.0;

// Threshold → crop → resize converges in one or two rounds on anything but
// adversarial inputs; the cap only guards against oscillation.
const MAX_ROUNDS: usize = 16;

/// Bilinear resize with aligned corners: output corners sample input corners exactly,
/// so resizing to the same size is the identity.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "image buffer does not match {h}×{w}");
    let coord = |i: usize, n_in: usize, n_out: usize| -> f64 {
        if n_out == 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = vec![0f32; out_h * out_w];
    for oy in 0..out_h {
        let sy = coord(oy, h, out_h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = coord(ox, w, out_w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let at = |y: usize, x: usize| src[y * w + x] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[oy * out_w + ox] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
    out
}

fn bounding_box(img: &[f32], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for y in 0..h {
        for x in 0..w {
            if img[y * w + x] != 0.0 {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    (y0 <= y1).then_some((y0, y1 + 1, x0, x1 + 1))
}

/// Zeroes background below `threshold`, crops to the tight bounding box of what
/// remains and resizes to `out_h×out_w`, repeating until the result is a fixed
/// point (so the operation is idempotent). A fully dark image becomes zeros.
pub fn preprocess(img: &[f32], h: usize, w: usize, out_h: usize, out_w: usize, threshold: f32) -> Vec<f32> {
    let (mut cur, mut ch, mut cw) = (img.to_vec(), h, w);
    for _ in 0..MAX_ROUNDS {
        for v in cur.iter_mut() {
            if *v < threshold {
                *v = 0.0;
            }
        }
        let Some((y0, y1, x0, x1)) = bounding_box(&cur, ch, cw) else {
            return vec![0.0; out_h * out_w];
        };
        if (y0, y1, x0, x1) == (0, ch, 0, cw) && (ch, cw) == (out_h, out_w) {
            return cur;
        }
        let crop: Vec<f32> = (y0..y1).flat_map(|y| cur[y * cw + x0..y * cw + x1].iter().copied()).collect();
        cur = resize_bilinear(&crop, y1 - y0, x1 - x0, out_h, out_w);
        (ch, cw) = (out_h, out_w);
    }
    cur
}
