//! Ten-form geomorphon classification from ternary line-of-sight patterns.

use super::{ClassMap, Raster, SynthError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Landform {
    Flat = 0,
    Peak,
    Ridge,
    Shoulder,
    Spur,
    Slope,
    Hollow,
    Footslope,
    Valley,
    Pit,
}

pub const LANDFORMS: usize = 10;

impl Landform {
    pub const ALL: [Landform; LANDFORMS] = [
        Landform::Flat,
        Landform::Peak,
        Landform::Ridge,
        Landform::Shoulder,
        Landform::Spur,
        Landform::Slope,
        Landform::Hollow,
        Landform::Footslope,
        Landform::Valley,
        Landform::Pit,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            Landform::Flat => "flat",
            Landform::Peak => "peak",
            Landform::Ridge => "ridge",
            Landform::Shoulder => "shoulder",
            Landform::Spur => "spur",
            Landform::Slope => "slope",
            Landform::Hollow => "hollow",
            Landform::Footslope => "footslope",
            Landform::Valley => "valley",
            Landform::Pit => "pit",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.key() == key)
    }
}

// Indexed by [count of lower directions][count of higher directions].
#[rustfmt::skip]
const FORMS: [[u8; 9]; 9] = [
    [1, 1, 1, 8, 8, 9, 9, 9, 10],
    [1, 1, 8, 8, 8, 9, 9, 9, 0],
    [1, 4, 6, 6, 7, 7, 9, 0, 0],
    [4, 4, 6, 6, 6, 7, 0, 0, 0],
    [4, 4, 5, 6, 6, 0, 0, 0, 0],
    [3, 3, 5, 5, 0, 0, 0, 0, 0],
    [3, 3, 3, 0, 0, 0, 0, 0, 0],
    [3, 3, 0, 0, 0, 0, 0, 0, 0],
    [2, 0, 0, 0, 0, 0, 0, 0, 0],
];

pub fn landform_from_counts(lower: usize, higher: usize) -> Landform {
    debug_assert!(lower + higher <= 8);
    // Table codes are 1-based: 1 flat .. 10 pit.
    Landform::ALL[FORMS[lower][higher] as usize - 1]
}

const DIRECTIONS: [(isize, isize); 8] =
    [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeomorphonParams {
    pub radius: usize,
    /// Flatness threshold in degrees, measured on relief rescaled so the
    /// elevation range spans the larger raster dimension.
    pub flat_threshold_deg: f64,
}

impl Default for GeomorphonParams {
    fn default() -> Self {
        Self { radius: 8, flat_threshold_deg: 1.0 }
    }
}

pub fn geomorphon_classify(dem: &Raster, params: GeomorphonParams) -> Result<ClassMap, SynthError> {
    let (h, w) = (dem.height(), dem.width());
    if dem.channels() != 1 {
        return Err(SynthError::Dimension(format!("elevation raster has {} channels", dem.channels())));
    }
    if params.radius == 0 {
        return Err(SynthError::Config("geomorphon radius must be at least 1".into()));
    }
    if params.radius > h.min(w) / 2 {
        return Err(SynthError::Config(format!(
            "geomorphon radius {} exceeds half extent of {h}x{w}",
            params.radius
        )));
    }
    if !(params.flat_threshold_deg.is_finite() && params.flat_threshold_deg >= 0.0) {
        return Err(SynthError::Config("flatness threshold must be non-negative".into()));
    }

    let z = dem.plane(0);
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    if !(hi > lo) {
        return ClassMap::new(LANDFORMS, h, w, vec![Landform::Flat as u8; h * w]);
    }
    let extent = h.max(w) as f64;
    let rel: Vec<f64> = z.iter().map(|&v| (v as f64 - lo) / (hi - lo) * extent).collect();
    let threshold = params.flat_threshold_deg.to_radians().tan();

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let z0 = rel[y * w + x];
            let (mut lower, mut higher) = (0, 0);
            for &(dx, dy) in &DIRECTIONS {
                let step_len = ((dx * dx + dy * dy) as f64).sqrt();
                let mut zenith = f64::NEG_INFINITY;
                let mut nadir = f64::INFINITY;
                for s in 1..=params.radius as isize {
                    let (xx, yy) = (x as isize + dx * s, y as isize + dy * s);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        break;
                    }
                    let gradient = (rel[yy as usize * w + xx as usize] - z0) / (s as f64 * step_len);
                    zenith = zenith.max(gradient);
                    nadir = nadir.min(gradient);
                }
                if zenith == f64::NEG_INFINITY {
                    continue;
                }
                // Compare tangents; arctan is monotone so this matches angle comparison.
                if zenith.abs() > threshold || nadir.abs() > threshold {
                    if nadir.abs() < zenith.abs() {
                        higher += 1;
                    } else if nadir.abs() > zenith.abs() {
                        lower += 1;
                    }
                }
            }
            out.push(landform_from_counts(lower, higher) as u8);
        }
    }
    ClassMap::new(LANDFORMS, h, w, out)
}

/// Most frequent landform; ties go to the lower code.
pub fn landform_mode(map: &ClassMap) -> Landform {
    let fr = map.fractions();
    let mut best = 0;
    for (i, &f) in fr.iter().enumerate() {
        if f > fr[best] {
            best = i;
        }
    }
    Landform::ALL[best]
}
