use dsl::formats::*;
use dsl_core::correspondence::CorrespondenceSample;
use dsl_core::image::ScalarMap;
use dsl_core::optics::Order;
use dsl_core::{Cube, EfficiencySet, Image, Rig, SpectralCurve, WavelengthGrid};
use proptest::collection::vec;
use proptest::prelude::*;

fn f32_exact() -> impl Strategy<Value = f64> {
    (-1e6f32..1e6f32).prop_map(|v| v as f64)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..9, 1usize..9)
}

fn curve(g: WavelengthGrid, lo: f64, hi: f64) -> impl Strategy<Value = SpectralCurve> {
    vec(lo..hi, g.len()).prop_map(move |v| SpectralCurve::new(g, v).unwrap())
}

proptest! {
    #[test]
    fn pfm_color_round_trip(((w, h), seed) in (dims(), vec(f32_exact(), 3 * 64))) {
        let img = Image::from_data(w, h, seed[..3 * w * h].to_vec()).unwrap();
        prop_assert_eq!(decode_pfm(&encode_pfm(&img)).unwrap(), img);
    }

    #[test]
    fn pfm_gray_round_trip(((w, h), seed) in (dims(), vec(f32_exact(), 64))) {
        let map = ScalarMap::from_data(w, h, seed[..w * h].to_vec()).unwrap();
        prop_assert_eq!(decode_pfm_gray(&encode_pfm_gray(&map)).unwrap(), map);
    }

    #[test]
    fn cube_round_trip((w, h) in dims(), bands in 1usize..50, seed in vec(f32_exact(), 64 * 50)) {
        let g = WavelengthGrid::with_count(430.0, 5.0, bands).unwrap();
        let cube = Cube::from_data(w, h, g, seed[..w * h * bands].to_vec()).unwrap();
        let bytes = encode_cube(&cube);
        prop_assert_eq!(decode_cube(&bytes, Some(g)).unwrap(), cube.clone());
        prop_assert_eq!(decode_cube(&bytes, None).unwrap(), cube);
    }

    #[test]
    fn truncated_cube_is_rejected(cut in 1usize..100) {
        let g = WavelengthGrid::standard();
        let bytes = encode_cube(&Cube::zeros(2, 1, g));
        let short = &bytes[..bytes.len() - cut.min(bytes.len())];
        prop_assert!(decode_cube(short, Some(g)).is_err());
    }

    #[test]
    fn spectra_csv_round_trip(curves in vec(curve(WavelengthGrid::standard(), -10.0, 10.0), 1..5)) {
        let names: Vec<String> = (0..curves.len()).map(|i| format!("s{i}")).collect();
        let (n, c) = decode_spectra(&encode_spectra(&names, &curves)).unwrap();
        prop_assert_eq!(n, names);
        prop_assert_eq!(c, curves);
    }

    #[test]
    fn efficiency_csv_round_trip(
        zero in curve(WavelengthGrid::standard(), 0.0, 1.5),
        minus in proptest::option::of(curve(WavelengthGrid::standard(), 0.0, 1.5)),
        plus in proptest::option::of(curve(WavelengthGrid::standard(), 0.0, 1.5)),
    ) {
        let eta = EfficiencySet::new(zero, minus, plus).unwrap();
        prop_assert_eq!(decode_efficiency(&encode_efficiency(&eta)).unwrap(), eta);
    }

    #[test]
    fn samples_csv_round_trip(raw in vec((0.0..640.0f64, 0.0..480.0f64, 100.0..5000.0f64, any::<bool>(), 430.0..660.0f64, -50.0..700.0f64), 0..20)) {
        let samples: Vec<CorrespondenceSample> = raw
            .iter()
            .map(|&(x, y, z, plus, l, q)| CorrespondenceSample {
                pixel: [x, y],
                depth_mm: z,
                order: if plus { Order::Plus } else { Order::Minus },
                wavelength_nm: l,
                column: q,
            })
            .collect();
        prop_assert_eq!(decode_samples(&encode_samples(&samples)).unwrap(), samples);
    }
}

#[test]
fn model_round_trip_preserves_queries() {
    let rig = Rig::demo();
    let knots = [430.0, 500.0, 580.0, 660.0];
    let depths = [600.0, 700.0, 800.0, 900.0, 1000.0];
    for table in [None, Some(2.0)] {
        let (model, _) = dsl::experiments::fit_model(&rig, [3, 3], &knots, &depths, table).unwrap();
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back), bytes);
        for (p, z, l) in [([3.0, 7.0], 650.0, 455.0), ([40.5, 60.0], 920.0, 640.0), ([32.0, 32.0], 800.0, 580.0)] {
            for o in Order::FIRST {
                assert_eq!(model.query(p, z, o, l).ok(), back.query(p, z, o, l).ok());
            }
        }
    }
    let bytes = encode_model(&dsl::experiments::fit_model(&rig, [2, 2], &knots, &depths, None).unwrap().0);
    for cut in [0, 3, 8, 40, bytes.len() - 1] {
        assert!(decode_model(&bytes[..cut]).is_err());
    }
}
