mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmo_core::biomarker::{
    fit_gamma_model, pairwise_stats, suv_to_omf, synth_radiosensitivity, validate_gamma_assumption, GammaModel,
    OmfConstants, StatsBin,
};
use rfmo_core::model::{voxel_distance, RadiosensitivityMap, VoxelGrid};

fn planted_stats(g: &GammaModel, bins: u32) -> Vec<StatsBin> {
    (1..=bins).map(|d| StatsBin { delta_bin: d, percentile: g.curve(d as f64), max: g.curve(d as f64), count: 10 }).collect()
}

#[test]
fn fit_recovers_planted_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let g = GammaModel::new(rng.gen_range(0.0..0.1), rng.gen_range(-0.01..0.0), rng.gen_range(0.0..0.05));
        let f = fit_gamma_model(&planted_stats(&g, 10), 0.0).unwrap();
        assert!((f.alpha0 - g.alpha0).abs() <= 1e-8, "{f:?} vs {g:?}");
        assert!((f.alpha1 - g.alpha1).abs() <= 1e-8);
        assert!((f.alpha2 - g.alpha2).abs() <= 1e-8);
    }
}

#[test]
fn fit_covers_every_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let stats: Vec<StatsBin> = (1..=14)
            .map(|d| {
                let p = 0.03 + 0.01 * (d as f64).ln() + rng.gen_range(-0.005..0.005);
                StatsBin { delta_bin: d, percentile: p, max: p + 0.01, count: 5 }
            })
            .collect();
        let f = fit_gamma_model(&stats, 0.01).unwrap();
        assert_eq!(f.gamma_offset, 0.01);
        for s in &stats {
            assert!(f.curve(s.delta_bin as f64) >= s.percentile - 1e-9, "bin {} under the curve", s.delta_bin);
        }
    }
    assert!(fit_gamma_model(&planted_stats(&GammaModel::DEFAULT, 2), 0.0).is_err());
}

#[test]
fn default_model_is_a_metric() {
    let r = validate_gamma_assumption(&GammaModel::DEFAULT, 50).unwrap();
    assert!(r.passed(), "{:?}", r.violations);
    let bad = GammaModel::new(0.05, 0.01, -0.03);
    assert!(!validate_gamma_assumption(&bad, 20).unwrap().passed());
    assert!(validate_gamma_assumption(&GammaModel::DEFAULT, 1).is_err());
    assert_eq!(GammaModel::DEFAULT.eval(0.0), 0.0);
}

#[test]
fn pairwise_stats_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for p in [50.0, 95.0, 100.0] {
        let (grid, phi) = random_phi_case(&mut rng, 30);
        let stats = pairwise_stats(&phi, &grid, p).unwrap();
        let mut by_bin: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
        let v = phi.values();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let d = voxel_distance(grid.coords(phi.voxels()[i]), grid.coords(phi.voxels()[j]));
                by_bin.entry(d).or_default().push((v[i] - v[j]).abs());
            }
        }
        assert_eq!(stats.len(), by_bin.len());
        for (s, (d, mut xs)) in stats.iter().zip(by_bin) {
            xs.sort_by(f64::total_cmp);
            let rank = ((p / 100.0 * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
            assert_eq!(s.delta_bin, d);
            assert_eq!(s.count, xs.len() as u64);
            assert_eq!(s.percentile, xs[rank - 1]);
            assert_eq!(s.max, *xs.last().unwrap());
        }
    }
}

#[test]
fn omf_is_normalized() {
    let c = OmfConstants::default();
    let suv = [1.0, 2.0, 5.0, 9.0];
    let m = suv_to_omf(&[0, 1, 2, 3], &suv, &c).unwrap();
    assert_eq!(m.values()[0], 1.0);
    assert!(m.values().windows(2).all(|w| w[0] >= w[1]));
    assert!(m.values().iter().all(|&x| x > 0.0 && x <= 1.0));
    let r = suv_to_omf(&[0, 1, 2, 3], &suv, &OmfConstants { po2_ref: Some(OmfConstants::REFERENCE_PO2), ..c }).unwrap();
    assert!(r.values().iter().all(|&x| x <= 1.0));
    assert!(suv_to_omf(&[0], &[11.0], &c).is_err());
    assert!(suv_to_omf(&[0, 1], &[1.0], &c).is_err());
}

#[test]
fn synthetic_map_range() {
    let grid = VoxelGrid::full([7, 7, 5], [1.0; 3]).unwrap();
    let target: Vec<usize> = (0..grid.num_voxels()).filter(|&v| grid.distance(v, 3 * 7 * 5 / 2) <= 2).collect();
    let m = synth_radiosensitivity(&grid, &target).unwrap();
    assert!(m.values().iter().all(|&x| (0.85 - 1e-12..=1.0).contains(&x)));
    let lowest = m.values().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((lowest - 0.85).abs() <= 1e-12);
    assert!(synth_radiosensitivity(&grid, &target[..3]).is_err());
}

proptest! {
    #[test]
    fn oer_monotone(a in 0.25f64..10.9, b in 0.25f64..10.9) {
        let c = OmfConstants::default();
        let (pa, pb) = (c.po2(a).unwrap(), c.po2(b).unwrap());
        prop_assert!(pa >= 0.0 && pb >= 0.0);
        if a < b {
            prop_assert!(pa >= pb && c.oer(pa) >= c.oer(pb));
        }
    }

    #[test]
    fn offset_keeps_metric(offset in 0.0f64..0.2) {
        let g = GammaModel::DEFAULT.with_offset(offset);
        prop_assert!(validate_gamma_assumption(&g, 30).unwrap().passed());
    }

    #[test]
    fn map_rejects_out_of_range(x in 1.0001f64..2.0) {
        prop_assert!(RadiosensitivityMap::new(vec![0], vec![x]).is_err());
        prop_assert!(RadiosensitivityMap::new(vec![0], vec![-x]).is_err());
    }
}
