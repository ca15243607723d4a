mod common;

use common::{mat, term};
use ltv_core::linalg::spectral_norm;
use ltv_core::{catalog, CoefficientFunction, Error, SystemFile, Wave};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn samples(start: f64, end: f64) -> impl Iterator<Item = f64> {
    (0..=400).map(move |i| start + (end - start) * i as f64 / 400.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn periodic_bound_dominates(offset in prop::collection::vec(-2.0f64..2.0, 4), amps in prop::collection::vec(-1.0f64..1.0, 3), freq in 0.1f64..5.0) {
        let terms = vec![
            term(0, 0, amps[0], freq, Wave::Sin),
            term(0, 1, amps[1], 2.0 * freq, Wave::Cos),
            term(1, 1, amps[2], 0.5 * freq, Wave::Sin),
        ];
        let f = CoefficientFunction::periodic(DMatrix::from_row_slice(2, 2, &offset), terms).unwrap();
        for t in samples(0.0, 30.0) {
            prop_assert!(spectral_norm(&f.value_at(t)) <= f.bound() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sampled_bound_and_interpolation(values in prop::collection::vec(-3.0f64..3.0, 5), step in 0.1f64..2.0) {
        let mats: Vec<_> = values.iter().map(|&v| mat(1, 1, &[v])).collect();
        let f = CoefficientFunction::sampled(0.0, step, mats).unwrap();
        let (start, end) = f.domain();
        prop_assert!((end - 4.0 * step).abs() < 1e-12 && start == 0.0);
        for t in samples(start, end) {
            prop_assert!(f.value_at(t)[(0, 0)].abs() <= f.bound() * (1.0 + 1e-12));
        }
        for (i, v) in values.iter().enumerate() {
            prop_assert!((f.value_at(step * i as f64)[(0, 0)] - v).abs() <= 1e-12);
        }
        let outside = matches!(f.evaluate(end + 1.0), Err(Error::Domain { .. }));
        prop_assert!(outside);
    }

    #[test]
    fn piecewise_is_right_continuous(values in prop::collection::vec(-3.0f64..3.0, 3)) {
        let mats: Vec<_> = values.iter().map(|&v| mat(1, 1, &[v])).collect();
        let f = CoefficientFunction::piecewise_constant(vec![1.0, 2.5], mats).unwrap();
        prop_assert_eq!(f.value_at(0.5)[(0, 0)], values[0]);
        prop_assert_eq!(f.value_at(1.0)[(0, 0)], values[1]);
        prop_assert_eq!(f.value_at(2.5)[(0, 0)], values[2]);
        prop_assert_eq!(f.breakpoints_in(0.0, 10.0), vec![1.0, 2.5]);
    }
}

#[test]
fn bundled_examples_roundtrip_through_toml() {
    for ex in catalog::EXAMPLES {
        let file = catalog::get(ex.name).unwrap();
        let again = SystemFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again, file, "{}", ex.name);
        let sys = again.build().unwrap();
        assert_eq!(sys.name(), ex.name);
    }
}

#[test]
fn examples_are_written_to_disk() {
    let dir = std::env::temp_dir().join(format!("ltv-examples-{}", std::process::id()));
    let written = catalog::write_all(&dir).unwrap();
    assert_eq!(written.len(), catalog::EXAMPLES.len());
    for path in &written {
        SystemFile::load(path).unwrap().build().unwrap();
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_file_is_a_parse_error() {
    let err = SystemFile::load(std::path::Path::new("/nonexistent/system.toml")).unwrap_err();
    assert!(matches!(err, Error::Parse(_)));
}
