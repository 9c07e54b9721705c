use std::collections::HashSet;

use chrono::Datelike;
use geomeld_core::synth::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> GeneratorConfig {
    GeneratorConfig::square(32)
}

#[test]
fn anchor_is_deterministic_and_on_the_fifteenth() {
    for i in 0..500 {
        let id = format!("tile-{i}");
        let a = temporal_anchor(&id);
        assert_eq!(a, temporal_anchor(&id));
        assert_eq!(a.day(), 15);
    }
}

#[test]
fn anchor_years_and_months_are_uniform() {
    let n = 10_000;
    let mut years = [0usize; 4];
    let mut months = [0usize; 12];
    for i in 0..n {
        let d = temporal_anchor(&format!("id-{i:05}"));
        years[(d.year() - 2018) as usize] += 1;
        months[d.month0() as usize] += 1;
    }
    for y in years {
        let f = y as f64 / n as f64;
        assert!((f - 0.25).abs() <= 0.03, "year frequency {f}");
    }
    // Chi-square against uniform months, 11 degrees of freedom, p = 0.001.
    let expected = n as f64 / 12.0;
    let chi2: f64 = months.iter().map(|&m| (m as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 31.26, "month chi-square {chi2}");
}

#[test]
fn generation_is_bit_reproducible() {
    let a = generate_tile("repro", &small(), 11).unwrap();
    let b = generate_tile("repro", &small(), 11).unwrap();
    assert_eq!(a, b);
    let c = generate_tile("repro", &small(), 12).unwrap();
    assert_ne!(a.s2, c.s2);
}

#[test]
fn default_geometry_is_128() {
    let cfg = GeneratorConfig::default();
    assert_eq!((cfg.height, cfg.width), (128, 128));
    let t = generate_tile("full-size", &cfg, 0).unwrap();
    for (c, h, w) in [
        (t.s2.channels(), t.s2.height(), t.s2.width()),
        (t.s1.channels(), t.s1.height(), t.s1.width()),
        (t.dem.channels(), t.dem.height(), t.dem.width()),
        (t.canopy.channels(), t.canopy.height(), t.canopy.width()),
    ] {
        assert!(c >= 1);
        assert_eq!((h, w), (128, 128));
    }
    assert_eq!((t.dw.height(), t.esa.width()), (128, 128));
}

#[test]
fn bad_geometry_is_a_configuration_error() {
    let mut cfg = small();
    cfg.height = 30;
    assert!(matches!(generate_tile("x", &cfg, 0), Err(SynthError::Config(_))));
    let cfg = GeneratorConfig::square(12);
    assert!(matches!(generate_tile("x", &cfg, 0), Err(SynthError::Config(_))));
}

#[test]
fn rasters_respect_value_ranges() {
    for t in generate_dataset(40, &small(), 5).unwrap() {
        assert!(t.s2.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(t.s1.data().iter().all(|&v| (-30.0..=5.0).contains(&v)));
        assert!(t.canopy.data().iter().all(|&v| v >= 0.0));
        assert!(t.dw.data().iter().all(|&v| (v as usize) < DW_CLASSES));
        assert!(t.esa.data().iter().all(|&v| (v as usize) < ESA_CLASSES));
        assert_eq!(t.anchor_date.day(), 15);
        assert!(!t.caption.is_empty());
        let a = &t.attributes;
        assert!(a.class_fractions.iter().all(|&f| f <= a.dominant_fraction));
    }
}

#[test]
fn stored_water_fraction_matches_pixel_scan() {
    for t in generate_dataset(60, &small(), 21).unwrap() {
        let mut water = 0usize;
        for y in 0..t.height() {
            for x in 0..t.width() {
                let dw = DwClass::from_id(t.dw.get(y, x)).unwrap();
                let esa = EsaClass::from_id(t.esa.get(y, x)).unwrap();
                if dw == DwClass::Water && esa == EsaClass::PermanentWater {
                    water += 1;
                }
            }
        }
        let oracle = water as f64 / (t.height() * t.width()) as f64;
        assert_eq!(t.attributes.water_fraction, oracle);
    }
}

fn correlation(a: &[f32], b: &[f32], side: usize, dy: isize, dx: isize) -> f64 {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for y in 0..side as isize {
        for x in 0..side as isize {
            let (yy, xx) = (y + dy, x + dx);
            if yy < 0 || xx < 0 || yy >= side as isize || xx >= side as isize {
                continue;
            }
            xs.push(a[y as usize * side + x as usize] as f64);
            ys.push(b[yy as usize * side + xx as usize] as f64);
        }
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn elevation_and_canopy_are_aligned_at_lag_zero() {
    let side = 32;
    let tiles = generate_dataset(200, &small(), 3).unwrap();
    let mut profile = [0.0; 7];
    let mut count = 0.0;
    for t in &tiles {
        assert_eq!((t.dem.height(), t.dem.width()), (t.canopy.height(), t.canopy.width()));
        let (d, c) = (t.dem.plane(0), t.canopy.plane(0));
        if c.iter().all(|&v| v == c[0]) {
            continue;
        }
        count += 1.0;
        for (lag, p) in profile.iter_mut().enumerate() {
            let l = lag as isize;
            *p += (correlation(d, c, side, 0, l) + correlation(d, c, side, l, 0)) / 2.0;
        }
    }
    assert!(count > 100.0);
    let profile: Vec<f64> = profile.iter().map(|p| p / count).collect();
    for lag in 2..profile.len() {
        assert!(profile[0] > profile[lag], "lag {lag}: {profile:?}");
    }
}

#[test]
fn every_land_cover_class_is_sometimes_dominant() {
    let tiles = generate_dataset(1000, &small(), 99).unwrap();
    let mut counts = [0usize; DW_CLASSES];
    for t in &tiles {
        counts[t.attributes.dominant_class.id() as usize] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        assert!(n as f64 / 1000.0 >= 0.02, "class {c} dominant in {n} tiles");
    }
    let ids: HashSet<_> = tiles.iter().map(|t| t.tile_id.clone()).collect();
    assert_eq!(ids.len(), 1000);
}

fn dem_from(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Raster {
    let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
    Raster::new(1, h, w, data).unwrap()
}

#[test]
fn flat_plane_is_flat() {
    let dem = dem_from(20, 24, |_, _| 312.5);
    let forms = geomorphon_classify(&dem, GeomorphonParams::default()).unwrap();
    assert!(forms.data().iter().all(|&f| f == Landform::Flat as u8));
}

#[test]
fn raised_pixel_is_a_peak() {
    let dem = dem_from(17, 17, |y, x| if (y, x) == (8, 8) { 105.0 } else { 100.0 });
    let forms = geomorphon_classify(&dem, GeomorphonParams { radius: 4, flat_threshold_deg: 1.0 }).unwrap();
    assert_eq!(forms.get(8, 8), Landform::Peak as u8);
    // The mirrored case.
    let dem = dem.map(|z| -z);
    let forms = geomorphon_classify(&dem, GeomorphonParams { radius: 4, flat_threshold_deg: 1.0 }).unwrap();
    assert_eq!(forms.get(8, 8), Landform::Pit as u8);
}

#[test]
fn ramp_interior_is_slope() {
    let radius = 4;
    let dem = dem_from(24, 24, |y, x| (2 * x + y) as f32);
    let forms = geomorphon_classify(&dem, GeomorphonParams { radius, flat_threshold_deg: 1.0 }).unwrap();
    for y in radius..24 - radius {
        for x in radius..24 - radius {
            assert_eq!(forms.get(y, x), Landform::Slope as u8, "({y},{x})");
        }
    }
}

#[test]
fn ramp_pattern_matches_direct_enumeration() {
    // Neighbours of an interior ramp pixel: count directions that rise and fall.
    let dirs = [(0i32, -1i32), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];
    let higher = dirs.iter().filter(|(dx, dy)| 2 * dx + dy > 0).count();
    let lower = dirs.iter().filter(|(dx, dy)| 2 * dx + dy < 0).count();
    assert_eq!((higher, lower), (4, 4));
    assert_eq!(landform_from_counts(lower, higher), Landform::Slope);
}

#[test]
fn oversize_radius_is_rejected() {
    let dem = dem_from(16, 20, |y, x| (x * y) as f32);
    let err = geomorphon_classify(&dem, GeomorphonParams { radius: 9, flat_threshold_deg: 1.0 });
    assert!(matches!(err, Err(SynthError::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn geomorphons_ignore_affine_elevation_changes(seed in any::<u64>(), a in 0.1f32..20.0, b in -2000.0f32..2000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = smooth_field(&mut rng, 24, 24, 2.5);
        let dem = Raster::new(1, 24, 24, field.iter().map(|&v| (v * 50.0 + 400.0) as f32).collect()).unwrap();
        let p = GeomorphonParams { radius: 6, flat_threshold_deg: 1.0 };
        let base = geomorphon_classify(&dem, p).unwrap();
        let moved = geomorphon_classify(&dem.map(|z| a * z + b), p).unwrap();
        let same = base.data().iter().zip(moved.data()).filter(|(x, y)| x == y).count();
        prop_assert!(same == base.data().len(), "{} of {} pixels agree", same, base.data().len());
    }
}

fn map(classes: usize, h: usize, w: usize, f: impl Fn(usize) -> u8) -> ClassMap {
    ClassMap::new(classes, h, w, (0..h * w).map(f).collect()).unwrap()
}

#[test]
fn water_consensus_cases() {
    let w_dw = DwClass::Water.id();
    let w_esa = EsaClass::PermanentWater.id();
    let (_, f) = water_consensus(&map(9, 8, 8, |_| w_dw), &map(11, 8, 8, |_| w_esa)).unwrap();
    assert_eq!(f, 1.0);
    let (mask, f) = water_consensus(
        &map(9, 8, 8, |i| if i < 32 { w_dw } else { 1 }),
        &map(11, 8, 8, |i| if i >= 32 { w_esa } else { 0 }),
    )
    .unwrap();
    assert_eq!(f, 0.0);
    assert!(mask.iter().all(|m| !m));
    assert!(water_consensus(&map(9, 8, 8, |_| 0), &map(11, 8, 9, |_| 0)).is_err());
}

#[test]
fn independent_water_labels_overlap_multiplicatively() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (200, 200);
    let dw_bits: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.3).collect();
    let esa_bits: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.3).collect();
    let dw = map(9, h, w, |i| if dw_bits[i] { DwClass::Water.id() } else { 2 });
    let esa = map(11, h, w, |i| if esa_bits[i] { EsaClass::PermanentWater.id() } else { 2 });
    let (_, f) = water_consensus(&dw, &esa).unwrap();
    let count = dw_bits.iter().zip(&esa_bits).filter(|(a, b)| **a && **b).count();
    assert_eq!(f, count as f64 / (h * w) as f64);
    // Binomial standard error at n = 40000 is about 0.0014.
    assert!((f - 0.09).abs() < 0.006, "{f}");
}

#[test]
fn container_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.gmt");
    let t = generate_tile("round-trip", &small(), 4).unwrap();
    write_tile(&path, &t).unwrap();
    let back = read_tile(&path).unwrap();
    assert_eq!(back, t);
    let bits = |r: &Raster| r.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.s2), bits(&t.s2));
    assert_eq!(bits(&back.dem), bits(&t.dem));
}

#[test]
fn truncated_container_fails_checksum() {
    let t = generate_tile("trunc", &small(), 4).unwrap();
    let bytes = encode_tile(&t);
    for cut in [bytes.len() - 1, bytes.len() / 2, 64, 7] {
        let err = decode_tile(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, FormatError::Checksum { .. }), "cut {cut}: {err}");
    }
}

#[test]
fn flipped_payload_byte_fails_checksum() {
    let t = generate_tile("flip", &small(), 4).unwrap();
    let bytes = encode_tile(&t);
    for pos in [200, bytes.len() / 2, bytes.len() - 10] {
        let mut b = bytes.clone();
        b[pos] ^= 0x01;
        assert!(matches!(decode_tile(&b), Err(FormatError::Checksum { .. })));
    }
}

#[test]
fn header_errors_are_distinct() {
    let t = generate_tile("hdr", &small(), 4).unwrap();
    let bytes = encode_tile(&t);
    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(decode_tile(&b), Err(FormatError::BadMagic { .. })));
    let mut b = bytes.clone();
    b[4] = 9;
    assert!(matches!(decode_tile(&b), Err(FormatError::UnsupportedVersion { found: 9 })));
    let missing = read_tile(std::path::Path::new("/nonexistent/tile.gmt"));
    assert!(matches!(missing, Err(FormatError::Io { .. })));
}

#[test]
fn manifest_round_trip() {
    let tiles = generate_dataset(5, &small(), 2).unwrap();
    let entries: Vec<ManifestEntry> = tiles
        .iter()
        .map(|t| ManifestEntry::for_tile(t, format!("{}.gmt", t.tile_id).into()))
        .collect();
    let text = format_manifest(&entries);
    assert_eq!(text.lines().count(), 5);
    let base = std::path::Path::new("/data");
    let back = parse_manifest(&text, base).unwrap();
    for (a, b) in entries.iter().zip(&back) {
        assert_eq!(b.path, base.join(&a.path));
        assert_eq!((&a.tile_id, a.anchor_date, a.dominant_class), (&b.tile_id, b.anchor_date, b.dominant_class));
        assert_eq!(a.water_fraction, b.water_fraction);
    }
    assert!(parse_manifest("a\tb\n", base).is_err());
}
