//! Frozen PNG + legend output for a fixed fused map.
//!
//! Set `CAPGUARD_UPDATE_GOLDEN=1` to rewrite the files under `tests/golden/`.

use std::fs;
use std::path::PathBuf;

use capguard::gcapm::{legend_path, render, GcapmMap, Palette};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// 6 rows x 8 columns: a background border, class bands inside.
fn pattern() -> GcapmMap {
    let (h, w) = (6, 8);
    let classes = (0..h * w)
        .map(|p| {
            let (r, c) = (p / w, p % w);
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                None
            } else {
                Some((r + c) % 3)
            }
        })
        .collect();
    GcapmMap::new(h, w, 3, classes).unwrap()
}

#[test]
fn render_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("pattern.png");
    let map = pattern();
    render(&map, &Palette::default(), &png).unwrap();

    // independent pixel check before comparing bytes
    let img = image::open(&png).unwrap().into_rgb8();
    let palette = Palette::default();
    for (x, y, px) in img.enumerate_pixels() {
        let expected = match map.at(y as usize, x as usize) {
            Some(c) => palette.classes[c],
            None => palette.background,
        };
        assert_eq!(px.0, expected, "pixel ({x}, {y})");
    }

    let golden_png = golden_dir().join("pattern.png");
    let golden_legend = golden_dir().join("pattern.legend.toml");
    if std::env::var_os("CAPGUARD_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::copy(&png, &golden_png).unwrap();
        fs::copy(legend_path(&png), &golden_legend).unwrap();
    }
    assert_eq!(fs::read(&png).unwrap(), fs::read(&golden_png).unwrap(), "png differs from golden");
    assert_eq!(
        fs::read_to_string(legend_path(&png)).unwrap(),
        fs::read_to_string(&golden_legend).unwrap(),
        "legend differs from golden"
    );
}

#[test]
fn legend_counts_add_up() {
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("p.png");
    render(&pattern(), &Palette::default(), &png).unwrap();
    let legend: toml::Value = toml::from_str(&fs::read_to_string(legend_path(&png)).unwrap()).unwrap();
    let bg = legend["background_pixels"].as_integer().unwrap();
    let classes: i64 = legend["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["pixels"].as_integer().unwrap())
        .sum();
    assert_eq!(bg, 24);
    assert_eq!(bg + classes, 48);
}
