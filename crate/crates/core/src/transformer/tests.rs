use ndarray::{s, Array1, Array2};

use super::*;
use crate::classical::soft_threshold;
use crate::instance::{sample_instance, InstanceConfig};
use crate::learned::{default_normalizer, lista_vm_forward, theory_params_with_schedule};

fn literal(entries: &[((usize, usize), f64)]) -> Array2<f64> {
    let mut m = Array2::zeros((6, 6));
    for &((r, c), v) in entries {
        m[[r, c]] = v;
    }
    m
}

#[test]
fn two_dimensional_single_layer_literal() {
    // rows: x0 x1 | y | β0 β1 | indicator
    let w = build_constructed_weights(2, 1, 1.0, 1.0, &[0.3], Gate::Fixed(7.0)).unwrap();
    let heads = &w.layers[0].heads;
    let k1 = literal(&[((3, 0), 1.0), ((4, 1), 1.0), ((5, 5), 1.0)]);
    let v1 = literal(&[((3, 0), 2.0), ((4, 1), 2.0)]);
    assert_eq!(heads[0].q, literal(&[((3, 3), -1.0), ((4, 4), -1.0), ((5, 5), -7.0)]));
    assert_eq!(heads[0].k, k1);
    assert_eq!(heads[0].v, v1);
    assert_eq!(heads[1].q, literal(&[((3, 3), 1.0), ((4, 4), 1.0), ((5, 5), -7.0)]));
    assert_eq!(heads[1].k, k1);
    assert_eq!(heads[1].v, -&v1);
    assert_eq!(heads[2].q, literal(&[((2, 5), 1.0)]));
    assert_eq!(heads[2].k, literal(&[((2, 2), 1.0)]));
    assert_eq!(heads[2].v, v1);
    assert_eq!(heads[3].q, literal(&[((2, 5), -1.0)]));
    assert_eq!(heads[3].k, literal(&[((2, 2), 1.0)]));
    assert_eq!(heads[3].v, -&v1);

    let mlp = &w.layers[0].mlp;
    assert_eq!(mlp.w1.dim(), (24, 6));
    let mut w1 = Array2::zeros((24, 6));
    let mut b = Array1::zeros(24);
    let mut w2 = Array2::zeros((6, 24));
    for (block, (sin, sout)) in [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
        for r in 0..6 {
            w2[[r, 6 * block + r]] = sout;
        }
        for r in [3, 4] {
            w1[[6 * block + r, r]] = sin;
            if block >= 2 {
                b[6 * block + r] = -0.3;
            }
        }
    }
    assert_eq!(mlp.w1, w1);
    assert_eq!(mlp.w2, w2);
    assert_eq!(mlp.b, b);
}

#[test]
fn value_block_scales_with_gamma() {
    let w = build_constructed_weights(3, 2, 1.25, 1.0, &[0.1, 0.1], Gate::Fixed(1.0)).unwrap();
    let v = w.layers[1].heads[0].v.slice(s![4..7, ..3]).to_owned();
    assert_eq!(v, Array2::<f64>::eye(3) * 2.5);
    assert!(build_constructed_weights(3, 1, 1.6, 1.0, &[0.1], Gate::Fixed(1.0)).is_err());
    assert!(build_constructed_weights(3, 2, 1.0, 1.0, &[0.1], Gate::Fixed(1.0)).is_err());
}

#[test]
fn constructed_mlp_is_soft_threshold_on_beta() {
    let d = 5;
    let theta = 0.4;
    let mlp = soft_threshold_mlp(d, theta);
    let h = Array2::from_shape_fn((12, 3), |(r, c)| ((r * 7 + c * 3) % 11) as f64 * 0.17 - 0.9);
    let out = mlp_apply(h.view(), &mlp).unwrap();
    for c in 0..3 {
        let want = soft_threshold(h.slice(s![6..11, c]), theta).unwrap();
        for (a, b) in out.slice(s![6..11, c]).iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()), "{a} vs {b}");
        }
        assert_eq!(out.slice(s![..6, c]), h.slice(s![..6, c]));
        assert_eq!(out[[11, c]], h[[11, c]]);
    }
}

#[test]
fn structure_preserved_and_iterates_match() {
    let cfg = InstanceConfig::new(5, 4, 2);
    let inst = sample_instance(&cfg, 9).unwrap();
    let thetas = [0.2, 0.1, 0.05];
    let w = build_constructed_weights(5, 3, 1.0, 1.0, &thetas, Gate::ProofBound { b_beta: 6.0, b_x: 5.0 }).unwrap();
    let h1 = embed_instance(&inst).h;
    let states = forward(&w, &h1).unwrap();
    assert_eq!(states.len(), 4);
    let params = theory_params_with_schedule(5, 1.0, 1.0, thetas.to_vec()).unwrap();
    for h in &states {
        assert_eq!(h.slice(s![..6, ..]), h1.slice(s![..6, ..]));
        assert_eq!(h.row(11), h1.row(11));
        for c in (1..h.ncols()).step_by(2) {
            assert!(h.slice(s![6..11, c]).iter().all(|&v| v == 0.0));
        }
    }
    for n in 1..=4 {
        let trace = lista_vm_forward(
            &params,
            inst.x.slice(s![..n, ..]),
            inst.y.slice(s![..n]),
            default_normalizer(n),
            None,
        )
        .unwrap();
        for (k, h) in states.iter().enumerate() {
            let b = extract_beta(h, n).unwrap();
            let diff = (&b - &trace.beta(k)).mapv(f64::abs).fold(0.0_f64, |a, &v| a.max(v));
            assert!(diff <= 1e-12, "n={n} k={k} diff={diff}");
        }
    }
}

#[test]
fn empty_network_returns_input() {
    let inst = sample_instance(&InstanceConfig::new(3, 2, 1), 1).unwrap();
    let h1 = embed_instance(&inst).h;
    let w = TransformerWeights { layers: vec![], meta: None };
    assert_eq!(forward(&w, &h1).unwrap(), vec![h1]);
}

fn with_betas(inst: &crate::instance::SparseInstance, beta: &Array1<f64>) -> Array2<f64> {
    let d = inst.d();
    let mut h = embed_instance(inst).h;
    for c in (0..h.ncols()).step_by(2) {
        h.slice_mut(s![d + 1..2 * d + 1, c]).assign(beta);
    }
    h
}

#[test]
fn average_layer_with_exact_iterates() {
    let inst = sample_instance(&InstanceConfig::new(4, 5, 2), 2).unwrap();
    let mut h = with_betas(&inst, &inst.beta_star);
    // the empty prefix carries no estimate
    h.slice_mut(s![5..9, 0]).fill(0.0);
    let aug = final_average_layer(&h).unwrap();
    assert_eq!(readout_linear(&aug, 0).unwrap(), 0.0);
    for n in 1..=5 {
        let x_next = if n < 5 { inst.x.row(n).to_owned() } else { inst.x_query.clone() };
        let want = (2.0 * n as f64 / (2 * n + 1) as f64) * x_next.dot(&inst.beta_star);
        assert!((readout_linear(&aug, n).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn average_layer_matches_loop() {
    let inst = sample_instance(&InstanceConfig::new(4, 5, 2), 3).unwrap();
    let mut h = embed_instance(&inst).h;
    for c in (2..h.ncols()).step_by(2) {
        for r in 5..9 {
            h[[r, c]] = ((r * 13 + c * 5) % 7) as f64 * 0.3 - 1.0;
        }
    }
    let aug = final_average_layer(&h).unwrap();
    for n in 0..=5 {
        let x_next = h.slice(s![..4, 2 * n]).to_owned();
        let mut acc = 0.0;
        for i in 1..=n {
            acc += extract_beta(&h, i).unwrap().dot(&x_next);
        }
        let want = 2.0 / (2 * n + 1) as f64 * acc;
        assert!((readout_linear(&aug, n).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn query_readout_cases() {
    let inst = sample_instance(&InstanceConfig::new(4, 3, 2), 4).unwrap();
    let h = with_betas(&inst, &inst.beta_star);
    for n in 1..=3 {
        assert!((readout_query(&h, n).unwrap() - inst.y[n - 1]).abs() < 1e-12);
    }
    assert!((readout_query(&h, 4).unwrap() - inst.y_query).abs() < 1e-12);
    assert!(readout_query(&h, 5).is_err());
    assert!(readout_query(&h, 0).is_err());
    let zero = embed_instance(&inst).h;
    assert_eq!(readout_query(&zero, 2).unwrap(), 0.0);
    let spec = ReadOutSpec::query_default(4);
    assert_eq!(spec.apply(&h, 2).unwrap(), readout_query(&h, 2).unwrap());
    assert_eq!(ReadOutSpec::Linear(Array1::zeros(10)).apply(&h, 2).unwrap(), 0.0);
}

#[test]
fn gate_overflow_and_round_trip() {
    assert!(matches!(
        proof_bound_gate(20, 200, 3.0, 10.0, 10.0),
        Err(crate::Error::Numeric { .. })
    ));
    let w = build_constructed_weights(2, 2, 1.0, 1.0, &[0.1, 0.2], Gate::Fixed(3.0)).unwrap();
    let bytes = w.to_bytes();
    let back = TransformerWeights::from_bytes(&bytes).unwrap();
    assert_eq!(back.layers, w.layers);
    assert!(TransformerWeights::from_bytes(&bytes[..bytes.len() - 8]).is_err());
}
