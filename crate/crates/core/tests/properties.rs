use num_complex::Complex64;
use pbg_core::analysis::{classify_regimes, detect_bandgap, group_index, rotate, unwrap_freq, unwrap_layers, DispersionResult};
use pbg_core::io::{
    load_config, parse_touchstone, read_dispersion_csv, read_spectrum_csv, read_touchstone, write_dispersion_csv,
    write_spectrum_csv, write_touchstone, Ports, TouchstoneFormat,
};
use pbg_core::{ComplexSpectrum, Polarization, RunKind, SpectrumMeta};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

fn congruent(a: f64, b: f64) -> bool {
    let turns = (a - b) / TAU;
    (turns - turns.round()).abs() < 1e-9
}

fn spectrum_strategy(max_len: usize) -> impl Strategy<Value = ComplexSpectrum> {
    (1.0e6..2.0e10f64, 1.0e3..5.0e7f64, prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 0..max_len), any::<bool>())
        .prop_map(|(start, step, values, tm)| {
            let freqs = (0..values.len()).map(|k| start + k as f64 * step).collect();
            let mut meta = SpectrumMeta::new(RunKind::Normalized);
            meta.polarization = Some(if tm { Polarization::TM } else { Polarization::TE });
            meta.layers = Some(values.len() % 19);
            meta.thickness = Some(step * 1e-9);
            meta.extra.insert("config_hash".into(), format!("{:016x}", values.len() * 7919));
            let values = values.into_iter().map(|(re, im)| Complex64::new(re, im)).collect();
            ComplexSpectrum::new(freqs, values, meta).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn frequency_unwrap_is_idempotent_and_congruent(raw in prop::collection::vec(-40.0..40.0f64, 1..300)) {
        let once = unwrap_freq(&raw);
        let twice = unwrap_freq(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        for (a, b) in once.iter().zip(&raw) {
            prop_assert!(congruent(*a, *b));
        }
        for w in once.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= PI + 1e-9);
        }
    }

    #[test]
    fn layer_unwrap_is_idempotent_and_congruent(first in 0usize..6, raw in prop::collection::vec(-20.0..20.0f64, 1..25)) {
        let map: BTreeMap<usize, f64> = raw.iter().enumerate().map(|(k, v)| (first + k, *v)).collect();
        let once = unwrap_layers(&map, PI).unwrap();
        let twice = unwrap_layers(&once.corrected, PI).unwrap();
        prop_assert!(twice.slips.values().all(|m| *m == 0));
        prop_assert_eq!(&twice.corrected, &once.corrected);
        for (n, v) in &once.corrected {
            prop_assert!(congruent(*v, map[n]));
            prop_assert!((v - map[n] - TAU * once.slips[n] as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_index_group_index_equals_index(n0 in 1.0..3.0f64, start in 1.0e9..1.0e10f64, step in 1.0e6..1.0e8f64, len in 3usize..60) {
        let freqs: Vec<f64> = (0..len).map(|k| start + k as f64 * step).collect();
        let n = vec![n0; len];
        let g = group_index(&n, &freqs, None).unwrap();
        for k in 1..len - 1 {
            prop_assert!((g.n_g[k] - n0).abs() <= 1e-12 * n0);
        }
    }

    #[test]
    fn regime_segments_partition_the_grid(n_g in prop::collection::vec(-2.0..3.0f64, 1..200), zero_tol in 0.0..0.2f64) {
        let freqs: Vec<f64> = (0..n_g.len()).map(|k| 8e9 + k as f64 * 15e6).collect();
        let segs = classify_regimes(&n_g, &freqs, zero_tol).segments;
        prop_assert_eq!(segs[0].first, 0);
        prop_assert_eq!(segs[segs.len() - 1].last, n_g.len() - 1);
        for w in segs.windows(2) {
            prop_assert_eq!(w[1].first, w[0].last + 1);
            prop_assert!(w[1].regime != w[0].regime);
        }
        for s in &segs {
            prop_assert!(s.first <= s.last);
            prop_assert_eq!(s.f_start, freqs[s.first]);
            prop_assert_eq!(s.f_end, freqs[s.last]);
        }
    }

    #[test]
    fn gap_detection_ignores_global_phase(
        depth in 5.0..40.0f64,
        centre in 100usize..300,
        half in 3usize..60,
        ripple in prop::collection::vec(-0.5..0.5f64, 401),
        angle in -10.0..10.0f64,
    ) {
        let freqs: Vec<f64> = (0..401).map(|k| 8e9 + k as f64 * 15e6).collect();
        let values: Vec<Complex64> = (0..401)
            .map(|k| {
                let x = (k as f64 - centre as f64) / half as f64;
                let db = ripple[k] - depth * (-x * x).exp();
                Complex64::from_polar(10f64.powf(db / 20.0), 0.01 * k as f64)
            })
            .collect();
        let t = ComplexSpectrum::new(freqs, values, SpectrumMeta::new(RunKind::Normalized)).unwrap();
        // rotation by a unit phasor perturbs |t| only at rounding level
        match (detect_bandgap(&t, 10.0), detect_bandgap(&rotate(&t, angle), 10.0)) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                for (x, y) in [(a.f_low, b.f_low), (a.f_high, b.f_high), (a.f_center, b.f_center)] {
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs());
                }
                prop_assert!((a.depth_db - b.depth_db).abs() < 1e-9);
                prop_assert!((a.passband_db - b.passband_db).abs() < 1e-9);
            }
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn touchstone_ri_round_trip(s in spectrum_strategy(80), two_port in any::<bool>()) {
        let ports = if two_port { Ports::Two } else { Ports::One };
        let back = read_touchstone(&write_touchstone(&s, TouchstoneFormat::RI, ports)).unwrap();
        prop_assert_eq!(back.meta, s.meta);
        prop_assert_eq!(back.freqs.len(), s.freqs.len());
        for (a, b) in back.freqs.iter().zip(&s.freqs) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        for (a, b) in back.values.iter().zip(&s.values) {
            prop_assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn touchstone_ma_round_trip(s in spectrum_strategy(40)) {
        let back = read_touchstone(&write_touchstone(&s, TouchstoneFormat::MA, Ports::One)).unwrap();
        for (a, b) in back.values.iter().zip(&s.values) {
            prop_assert!((a.norm() - b.norm()).abs() <= 1e-12 * b.norm().max(1e-300));
            prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn spectrum_csv_round_trip(s in spectrum_strategy(80)) {
        prop_assert_eq!(read_spectrum_csv(&write_spectrum_csv(&s)).unwrap(), s);
    }

    #[test]
    fn dispersion_csv_round_trip(phi in prop::collection::vec(-30.0..30.0f64, 3..80), m in -3i64..4, d in 0.001..0.5f64) {
        let freqs: Vec<f64> = (0..phi.len()).map(|k| 8e9 + k as f64 * 15e6).collect();
        let mut r = DispersionResult::from_phase(&freqs, phi, d, m, None).unwrap();
        r.layers = Some(7);
        r.polarization = Some(Polarization::TE);
        let (back, labels) = read_dispersion_csv(&write_dispersion_csv(&r, 0.05)).unwrap();
        prop_assert_eq!(labels.len(), r.n_g.len());
        prop_assert_eq!(back, r);
    }

    #[test]
    fn parsers_never_panic_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = parse_touchstone(&bytes);
        let _ = read_touchstone(&bytes);
        let _ = read_spectrum_csv(&bytes);
        let _ = read_dispersion_csv(&bytes);
        let _ = load_config(&bytes);
    }

    #[test]
    fn parsers_never_panic_on_near_miss_text(lines in prop::collection::vec(
        prop::sample::select(vec![
            "# GHz S RI R 50", "# Hz S MA R 50", "# MHz S DB", "# kHz Z RI R 75", "!", "! pbg.layers=3",
            "10 0.5 0.0", "1e1 1 2 3 4 5 6 7 8", "1 2", "nan 1 1", "-1 0 0", "[Version] 2.0", "1e400 0 0",
            "freq_hz,re,im", "freq_hz,delta_phi,n,n_g,dn_domega,regime", "# thickness=1e-2", "# kind=raw",
            "1e9,0,1,1,0,subluminal", "2e9,0.1,1.2,0.4,0,superluminal", "1,2,3", ",,,", "# =",
            "[crystal]", "aff = 0.6", "layers = \"1..=3\"", "layers = \"5..=2\"", "pol = [\"TE\", 3]", "[sweep]",
            "f_step = -1", "[sim]", "cell_size = 1e-9", "bogus = 1",
        ]),
        0..24,
    )) {
        let text = lines.join("\n");
        let bytes = text.as_bytes();
        let _ = parse_touchstone(bytes);
        let _ = read_touchstone(bytes);
        let _ = read_spectrum_csv(bytes);
        let _ = read_dispersion_csv(bytes);
        let _ = load_config(bytes);
    }
}
