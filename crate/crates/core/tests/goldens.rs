//! Stage outputs against images produced by `golden/make_goldens.py`.

use std::path::PathBuf;

use mnistgen_core::raster::decode_rgb;
use mnistgen_core::transforms::{
    apply_stage, compare_pipelines, AnnotatedImage, GrayMode, Pipeline, Stage, StageContext,
};

fn golden(name: &str) -> (u32, u32, Vec<u8>) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    decode_rgb(&std::fs::read(&path).unwrap()).unwrap()
}

fn rgb(name: &str) -> AnnotatedImage {
    let (w, h, px) = golden(name);
    AnnotatedImage::new(name, w, h, 3, px).unwrap()
}

/// Grayscale goldens are stored as 8-bit luma; decoding expands them to RGB.
fn luma(name: &str) -> Vec<u8> {
    golden(name).2.chunks(3).map(|p| p[0]).collect()
}

fn run(stage: Stage, x: &AnnotatedImage) -> AnnotatedImage {
    apply_stage(&stage, x, &StageContext::default()).unwrap()
}

#[test]
fn grayscale_matches_goldens() {
    let chart = rgb("gray_input.png");
    let w = run(
        Stage::Grayscale {
            mode: GrayMode::Weighted,
        },
        &chart,
    );
    assert_eq!(w.channels, 1);
    assert_eq!(w.pixels[0], 76);
    assert_eq!(w.pixels, luma("gray_weighted.png"));
    let m = run(
        Stage::Grayscale {
            mode: GrayMode::Mean,
        },
        &chart,
    );
    assert_eq!(m.pixels[0], 85);
    assert_eq!(m.pixels, luma("gray_mean.png"));
}

#[test]
fn center_crop_keeps_rows_and_columns_18_to_45() {
    let ramp = rgb("crop_input.png");
    let c = run(
        Stage::CenterCrop {
            width: 28,
            height: 28,
        },
        &ramp,
    );
    let (w, h, expected) = golden("crop_expected.png");
    assert_eq!((c.width, c.height), (w, h));
    assert_eq!(c.pixels, expected);
    // the ramp encodes x * 4 in red and y * 4 in green
    assert_eq!((c.pixels[0], c.pixels[1]), (72, 72));
    let last = c.pixels.len() - 3;
    assert_eq!((c.pixels[last], c.pixels[last + 1]), (180, 180));
}

#[test]
fn bilinear_resize_matches_goldens() {
    let src = rgb("resize_input.png");
    for (name, w, h) in [("resize_up.png", 16, 12), ("resize_down.png", 4, 4)] {
        let out = run(
            Stage::Resize {
                width: w,
                height: h,
            },
            &src,
        );
        assert_eq!(out.pixels, golden(name).2, "{name}");
    }
}

#[test]
fn mean_and_weighted_grayscale_diverge_by_9_on_pure_red() {
    let red = AnnotatedImage::new("red", 2, 2, 3, [255, 0, 0].repeat(4)).unwrap();
    let mean = Pipeline::new(vec![Stage::Grayscale {
        mode: GrayMode::Mean,
    }])
    .unwrap();
    let weighted = Pipeline::new(vec![Stage::Grayscale {
        mode: GrayMode::Weighted,
    }])
    .unwrap();
    let report = compare_pipelines(
        &mean,
        &weighted,
        std::slice::from_ref(&red),
        &StageContext::default(),
    )
    .unwrap();
    assert_eq!(report.max_delta(), Some(9));

    let with_bg = Pipeline::new(vec![
        Stage::BackgroundRemoval,
        Stage::Grayscale {
            mode: GrayMode::Weighted,
        },
    ])
    .unwrap();
    let report = compare_pipelines(&weighted, &with_bg, &[red], &StageContext::default()).unwrap();
    assert!(report.is_identical());
}
