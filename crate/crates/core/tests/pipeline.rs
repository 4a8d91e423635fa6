use agrisk::data::{check_nesting, read_yield_panel, transform_panel, write_yield_panel, PanelSchema};
use agrisk::decomposition::decompose;
use agrisk::estimation::{fit_mle, profile_zeta, GridSpec, MleOptions, ProfileParameter};
use agrisk::hierarchy::{HierarchySpec, Level};
use agrisk::synthetic::{generate_panel, GenerativeConfig};

fn small() -> GenerativeConfig {
    GenerativeConfig {
        villages: 10,
        times: 4,
        households_per_village: 8,
        parcels_per_household: 3,
        obs_probability: 0.6,
        seed: 12,
        ..Default::default()
    }
}

#[test]
fn generated_panel_survives_csv_round_trip() {
    let panel = generate_panel(&small()).unwrap();
    let mut buf = Vec::new();
    write_yield_panel(&mut buf, &panel.records).unwrap();
    let back = read_yield_panel(buf.as_slice(), &PanelSchema::default()).unwrap();
    assert_eq!(back, panel.records);
}

#[test]
fn generated_panels_are_properly_nested() {
    for seed in 0..5 {
        let panel = generate_panel(&GenerativeConfig { seed, ..small() }).unwrap();
        check_nesting(&panel.records).unwrap();
    }
}

#[test]
fn truth_decomposition_matches_decompose() {
    let cfg = small();
    let panel = generate_panel(&cfg).unwrap();
    assert_eq!(panel.truth.decomposition.unwrap(), decompose(&cfg.variances).unwrap());
}

#[test]
fn profile_likelihood_ratio_is_never_negative() {
    let panel = generate_panel(&small()).unwrap();
    let records = transform_panel(&panel.records).unwrap();
    let spec = HierarchySpec::full();
    let opts = MleOptions::default();
    let fit = fit_mle(&records, &spec, &opts).unwrap();
    let grid = GridSpec { points_per_side: 4, width_se: 3.0, values: None };
    for p in [ProfileParameter::Variance(Level::Season), ProfileParameter::Idiosyncratic] {
        let z = profile_zeta(&records, &spec, &fit, &p, &grid, &opts).unwrap();
        assert!(!z.grid.is_empty());
        for (i, a) in z.abs_zeta.iter().enumerate() {
            assert!(*a >= 0.0 && a.is_finite(), "{p}: point {i}");
            assert!(z.log_likelihood[i] <= fit.metrics.log_likelihood.unwrap() + 1e-6, "{p}: point {i} beats the MLE");
        }
    }
}
