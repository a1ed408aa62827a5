use proptest::prelude::*;

use spclab::lattice::isotropic_volume_change;
use spclab::modes::{neutron_weighted_dos_raw, Atom, Mode, ModeSet};
use spclab::relax::{debye_raman_rate, local_mode_rate, Method};
use spclab::synth::{generate_recovery_trace, generate_spectrum_set, SynthSpec};
use spclab::EnergyGrid;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxation_models_are_non_negative(
        t in 0.5f64..500.0,
        direct in 0.0f64..1e-2,
        c1 in 0.0f64..10.0,
        e1 in 15.0f64..600.0,
        c2 in 0.0f64..10.0,
        e2 in 15.0f64..600.0,
        raman in 0.0f64..1e-12,
        theta in 20.0f64..400.0,
    ) {
        prop_assert!(local_mode_rate(t, direct, &[(c1, e1), (c2, e2)]) >= 0.0);
        prop_assert!(debye_raman_rate(t, direct, raman, theta).unwrap() >= 0.0);
    }

    #[test]
    fn volume_change_vanishes_at_reference(d in 0.5f64..20.0, strain in 0.0f64..1e-2) {
        prop_assert_eq!(isotropic_volume_change(d, d), 0.0);
        let up = isotropic_volume_change(d * (1.0 + strain), d);
        let more = isotropic_volume_change(d * (1.0 + strain + 1e-4), d);
        prop_assert!(more > up);
    }

    #[test]
    fn dos_peak_sits_on_mode_frequency(freq in 20.0f64..580.0, fwhm in 2.0f64..15.0) {
        let grid = EnergyGrid::uniform(0.0, 600.0, 600).unwrap();
        let ms = ModeSet::new(
            vec![Atom {
                element: "H".into(),
                mass_amu: 1.008,
                position_angstrom: [0.0; 3],
                sigma_inc_barn: 80.27,
            }],
            vec![Mode { freq_cm: freq, eigvec: vec![0.0, 0.0, 1.0] }],
        )
        .unwrap();
        let raw = neutron_weighted_dos_raw(&ms, fwhm, &grid).unwrap();
        let k = (0..raw.len()).max_by(|&a, &b| raw[a].total_cmp(&raw[b])).unwrap();
        prop_assert!((grid.centers()[k] - freq).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn trace_generator_is_pure(seed in any::<u64>(), t1 in 1.0f64..1e4, beta in 0.5f64..1.5) {
        let a = generate_recovery_trace(t1, beta, Method::Inversion, 0.02, seed).unwrap();
        let b = generate_recovery_trace(t1, beta, Method::Inversion, 0.02, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn spectrum_generator_is_pure(seed in any::<u64>(), noise in 0.0f64..0.1) {
        let spec = SynthSpec { seed, noise_rel: noise, ..SynthSpec::two_band() };
        let a = generate_spectrum_set(&spec).unwrap();
        let b = generate_spectrum_set(&spec).unwrap();
        prop_assert_eq!(a, b);
    }
}
