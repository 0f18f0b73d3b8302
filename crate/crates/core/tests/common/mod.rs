//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trace_core::cor::{AffordanceSubtype, CoRDocument, Point, PointSet};
use trace_core::mask::MaskImage;

/// Inside-pixel hits for a point set, found by scanning every pixel and
/// testing whether the scaled point lands in that pixel's cell. The last
/// row and column also own the closing edge.
pub fn brute_force_inside(mask: &MaskImage, points: &PointSet) -> usize {
    let (w, h) = (mask.width(), mask.height());
    points
        .iter()
        .filter(|p| {
            let (sx, sy) = (p.x * w as f64, p.y * h as f64);
            let mut hit = false;
            for row in 0..h {
                for col in 0..w {
                    let in_x = (col as f64 <= sx && sx < col as f64 + 1.0) || (col == w - 1 && sx >= w as f64);
                    let in_y = (row as f64 <= sy && sy < row as f64 + 1.0) || (row == h - 1 && sy >= h as f64);
                    if in_x && in_y && mask.get(col, row) {
                        hit = true;
                    }
                }
            }
            hit
        })
        .count()
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol * 0.5, depth - 1) + rec(f, m, b, tol * 0.5, depth - 1)
    }
    rec(&f, a, b, tol, 40)
}

/// Two-sided Student-t tail probability by direct quadrature of the density
/// over `[|t|, ∞)`, mapped onto `[0, 1)`.
pub fn t_tail_oracle(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let t = t.abs();
    let mapped = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let x = t + u / (1.0 - u);
        density(x) / ((1.0 - u) * (1.0 - u))
    };
    (2.0 * integrate(mapped, 0.0, 1.0, 1e-15)).min(1.0)
}

const WORDS: [&str; 24] = [
    "the", "mug", "sits", "beside", "a", "plate", "free", "region", "left", "right", "table", "edge",
    "clear", "space", "between", "objects", "(roughly)", "spot", "café", "naïve", "area", "near", "corner",
    "it's",
];

const OTHER_SUBTYPES: [&str; 4] = ["Grasp Region", "Handle Contact", "Tool Tip", "Container Opening"];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..12);
    let mut s: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    if rng.gen_bool(0.3) {
        s.push("\u{2014}");
        s.push(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    let mut out = s.join(if rng.gen_bool(0.2) { "  " } else { " " });
    out.push('.');
    out
}

/// A random complete document with three-decimal points.
pub fn random_document(rng: &mut ChaCha8Rng) -> CoRDocument {
    let subtype = match rng.gen_range(0..4) {
        0 => AffordanceSubtype::PlacementAffordance,
        1 => AffordanceSubtype::ObjectReference,
        2 => AffordanceSubtype::FreeSpaceReference,
        _ => AffordanceSubtype::Other(OTHER_SUBTYPES[rng.gen_range(0..OTHER_SUBTYPES.len())].to_string()),
    };
    let step2 = if rng.gen_bool(0.5) {
        format!("{} The goal's subtype is \"{}\".", sentence(rng), subtype.label())
    } else {
        sentence(rng)
    };
    let texts = [sentence(rng), step2, sentence(rng), sentence(rng)];
    let n = rng.gen_range(1..=12);
    let points: PointSet = (0..n)
        .map(|_| Point::new(rng.gen_range(0..=1000) as f64 / 1000.0, rng.gen_range(0..=1000) as f64 / 1000.0).unwrap())
        .collect();
    CoRDocument::from_parts(texts, subtype, points).unwrap()
}

pub fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
