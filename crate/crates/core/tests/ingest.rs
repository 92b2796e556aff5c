use std::io::Write;

use ltpdpm::error::Error;
use ltpdpm::ingest::*;
use ltpdpm::synthetic::{simulate_scenario, ScenarioConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn csv_file(dir: &tempfile::TempDir, name: &str, rows: &[String]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "site_id,lon,lat,t,value").unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
    path
}

fn long_rows(sites: usize, weeks: usize) -> Vec<String> {
    let mut rows = Vec::new();
    for s in 0..sites {
        for t in 1..=weeks {
            rows.push(format!("s{s},{},{},{t},{}", 30.0 + s as f64, 20.0, 25.0 + 0.01 * t as f64));
        }
    }
    rows
}

#[test]
fn two_site_two_year_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = csv_file(&dir, "d.csv", &long_rows(2, 104));
    let d = load_dataset(&path, DatasetFormat::CsvLong).unwrap();
    assert_eq!((d.n_sites(), d.n_weeks(), d.years(), d.weeks_per_year()), (2, 104, 2, 52));
    assert_eq!(d.coords(), &[(30.0, 20.0), (31.0, 20.0)]);
    assert_eq!(d.values()[(1, 103)], 25.0 + 0.01 * 104.0);
}

#[test]
fn ragged_year_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = csv_file(&dir, "d.csv", &long_rows(2, 103));
    assert!(matches!(load_dataset(&path, DatasetFormat::CsvLong), Err(Error::Shape(_))));
}

#[test]
fn malformed_rows_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = long_rows(1, 52);
    rows[4] = "s0,30,20,5,warm".into();
    let path = csv_file(&dir, "d.csv", &rows);
    match load_dataset(&path, DatasetFormat::CsvLong) {
        Err(Error::Parse { location, .. }) => assert!(location.ends_with("row 6"), "{location}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let mut rows = long_rows(1, 52);
    rows[0] = "s0,30,20,1,NaN".into();
    let path = csv_file(&dir, "nan.csv", &rows);
    assert!(matches!(load_dataset(&path, DatasetFormat::CsvLong), Err(Error::Parse { .. })));
}

#[test]
fn simulated_dataset_round_trips_bit_exactly() {
    let scenario = simulate_scenario(&ScenarioConfig {
        years: 2,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("d.bin", DatasetFormat::Binary), ("d.csv", DatasetFormat::CsvLong)] {
        let path = dir.path().join(name);
        write_dataset(&scenario.data, &path, fmt).unwrap();
        let back = load_dataset(&path, fmt).unwrap();
        assert_eq!(back.coords(), scenario.data.coords());
        let same = back
            .values()
            .iter()
            .zip(scenario.data.values().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{name} changed values");
    }
    let path = dir.path().join("cov.csv");
    write_covariate(&scenario.covariate, &path).unwrap();
    assert_eq!(load_covariate(&path).unwrap(), scenario.covariate);
}

#[test]
fn binary_size_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&52u64.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 16]);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_dataset(&path, DatasetFormat::Binary), Err(Error::Parse { .. })));
}

#[test]
fn time_map_is_a_bijection() {
    for wpy in [52, 12, 1] {
        let total = 30 * wpy;
        let mut seen = vec![false; total];
        for t in 1..=total {
            let (t1, t2) = time_to_year_week(t, wpy);
            assert!((1..=wpy).contains(&t2));
            assert_eq!(t1, t.div_ceil(wpy));
            assert_eq!(year_week_to_time(t1, t2, wpy), t);
            assert!(!std::mem::replace(&mut seen[t - 1], true));
        }
    }
}

#[test]
fn weekly_thinning_examples() {
    let daily = DMatrix::from_fn(2, 15, |n, d| (100 * n + d + 1) as f64);
    let w = thin_weekly(&daily.columns(0, 14).into_owned(), 1).unwrap();
    assert_eq!(w.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 8.0]);
    let w = thin_weekly(&daily, 7).unwrap();
    assert_eq!(w.ncols(), 2);
    assert_eq!(w.row(1).iter().copied().collect::<Vec<_>>(), vec![107.0, 114.0]);
    let flat = thin_weekly(&DMatrix::from_element(3, 30, 4.5), 3).unwrap();
    assert!(flat.iter().all(|v| *v == 4.5));
    assert!(matches!(thin_weekly(&daily, 0), Err(Error::Argument(_))));
    assert!(matches!(thin_weekly(&daily, 8), Err(Error::Argument(_))));
}

#[test]
fn covariate_standardization_examples() {
    let cov = CovariateSeries::from_values(vec![1.0, 2.0, 3.0]).unwrap();
    let x0 = standardize_covariate(&cov, 3).unwrap();
    let r = 1.0 / 3f64.sqrt();
    let s = 1.0 / 2f64.sqrt();
    for t in 0..3 {
        assert!((x0[(t, 0)] - r).abs() < 1e-15);
    }
    assert!((x0[(0, 1)] + s).abs() < 1e-15);
    assert!(x0[(1, 1)].abs() < 1e-15);
    assert!((x0[(2, 1)] - s).abs() < 1e-15);
    let flat = CovariateSeries::from_values(vec![2.0; 5]).unwrap();
    assert!(matches!(standardize_covariate(&flat, 5), Err(Error::Degenerate(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn standardized_covariate_is_orthonormal(
        values in prop::collection::vec(-50.0f64..50.0, 3..60),
        extra in 0usize..20,
    ) {
        let t1 = values.len();
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let mut all = values.clone();
        all.extend((0..extra).map(|i| i as f64));
        let cov = CovariateSeries::from_values(all).unwrap();
        let x0 = standardize_covariate(&cov, t1).unwrap();
        let gram = x0.tr_mul(&x0);
        prop_assert!((gram - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn unit_stride_thinning_of_weekly_data_is_identity(
        n in 1usize..4,
        weeks in 1usize..10,
        seed in 0u64..1000,
    ) {
        // A weekly series spread to days (value on each week's first day)
        // thins back to itself.
        let weekly = DMatrix::from_fn(n, weeks, |i, t| ((seed + 31 * i as u64 + 7 * t as u64) % 97) as f64);
        let daily = DMatrix::from_fn(n, 7 * weeks, |i, d| if d % 7 == 0 { weekly[(i, d / 7)] } else { f64::NAN });
        prop_assert_eq!(thin_weekly(&daily, 1).unwrap(), weekly);
    }
}
