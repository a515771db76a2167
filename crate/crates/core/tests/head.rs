use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcpgen_core::gradcheck::{check_gradients, random_instance, InstanceSpec, FD_STEP};
use tcpgen_core::params::{Dims, ModelConfig, TcpgenModel};
use tcpgen_core::tcpgen::{
    compute_query, generation_prob, head_gradients, head_loss, interpolate, pointer_context,
    prev_embedding, ptr_distribution, query_projection, sigmoid,
};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn gradients_match_finite_differences() {
    let spec = InstanceSpec::default();
    for seed in 0..20 {
        let inst = random_instance(seed, &spec);
        let report = check_gradients(&inst, FD_STEP).unwrap();
        assert!(
            report.passed(),
            "seed {seed}: {} failures, max rel {:e} in {:?}",
            report.failures,
            report.max_rel_error,
            report.worst
        );
    }
}

#[test]
fn query_matches_dense_oracle() {
    let spec = InstanceSpec::default();
    for seed in 0..10 {
        let inst = random_instance(seed, &spec);
        let m = &inst.model;
        for ex in &inst.batch {
            let q = compute_query(
                m,
                ex.h_enc.view(),
                ex.y_prev,
                ex.h_ctc.as_ref().map(|c| c.view()),
            )
            .unwrap();
            // Column-by-column dot products.
            let mut u = ex.h_enc.clone();
            if let Some(c) = &ex.h_ctc {
                let p = query_projection(m).unwrap();
                for j in 0..u.len() {
                    u[j] += (0..c.len()).map(|i| c[i] * p[[i, j]]).sum::<f64>();
                }
            }
            let e = prev_embedding(m, ex.y_prev).unwrap();
            for j in 0..q.len() {
                let want: f64 = (0..u.len()).map(|i| u[i] * m.head.wq[[i, j]]).sum::<f64>()
                    + (0..e.len())
                        .map(|i| e[i] * m.head.wq_prev[[i, j]])
                        .sum::<f64>();
                assert!(rel_close(q[j], want, 1e-12) || (q[j] - want).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn pointer_context_and_gate_match_oracles() {
    let spec = InstanceSpec::default();
    for seed in 0..10 {
        let inst = random_instance(seed, &spec);
        let m = &inst.model;
        for ex in inst.batch.iter().filter(|e| !e.active.is_empty()) {
            let g = &inst.graphs[ex.graph];
            let enc = g.encode(m).unwrap();
            let h = enc.output();
            let q = compute_query(m, ex.h_enc.view(), ex.y_prev, None).unwrap();
            let dist = ptr_distribution(m, q.view(), h, &ex.active, &g.tree).unwrap();
            assert!((dist.sum() - 1.0).abs() < 1e-9);
            let ctx = pointer_context(m, &dist, h);
            let d_att = m.dims().d_att;
            for j in 0..d_att {
                let want: f64 = dist
                    .nodes
                    .iter()
                    .zip(&dist.probs)
                    .map(|(&n, &p)| {
                        p * (0..h.ncols())
                            .map(|i| h[[n, i]] * m.head.wv[[i, j]])
                            .sum::<f64>()
                    })
                    .sum();
                assert!((ctx[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
            let gp = generation_prob(m, ex.h_joint.view(), ctx.view()).unwrap();
            let mut a = m.head.bgen;
            for (i, v) in ex.h_joint.iter().chain(ctx.iter()).enumerate() {
                a += m.head.wgen[i] * v;
            }
            let want = 1.0 / (1.0 + (-a).exp());
            assert!(rel_close(gp, want, 1e-12));
        }
    }
}

#[test]
fn interpolation_stays_normalized() {
    let spec = InstanceSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let inst = random_instance(seed, &spec);
        let m = &inst.model;
        for ex in inst.batch.iter().filter(|e| !e.active.is_empty()) {
            let g = &inst.graphs[ex.graph];
            let enc = g.encode(m).unwrap();
            let q = compute_query(m, ex.h_enc.view(), ex.y_prev, None).unwrap();
            let dist = ptr_distribution(m, q.view(), enc.output(), &ex.active, &g.tree).unwrap();
            let raw: Vec<f64> = (0..=spec.vocab).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            for gate in [0.0, 0.3, 1.0, rng.gen_range(0.0..1.0)] {
                let out = interpolate(&p, &dist, gate).unwrap();
                assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn saturated_gate_has_zero_gate_gradient() {
    let inst = random_instance(3, &InstanceSpec::default());
    let mut m = inst.model.clone();
    m.head.wgen.fill(0.0);
    m.head.bgen = 50.0;
    assert_eq!(sigmoid(50.0), 1.0);
    let batch: Vec<_> = inst
        .batch
        .iter()
        .filter(|e| !e.active.is_empty())
        .filter(|e| {
            e.active
                .iter()
                .any(|&n| inst.graphs[e.graph].tree.piece(n) == e.target)
        })
        .cloned()
        .collect();
    assert!(!batch.is_empty());
    let (_, g) = head_gradients(&m, &inst.graphs, &batch).unwrap();
    assert!(g.head.wgen.iter().all(|&v| v == 0.0));
    assert_eq!(g.head.bgen, 0.0);

    m.head.bgen = -50.0;
    let (_, g) = head_gradients(&m, &inst.graphs, &inst.batch).unwrap();
    assert!(g.head.wgen.iter().all(|v| v.abs() < 1e-18));
}

#[test]
fn lr_zero_step_leaves_loss_unchanged() {
    let inst = random_instance(8, &InstanceSpec::default());
    let (loss, grad) = head_gradients(&inst.model, &inst.graphs, &inst.batch).unwrap();
    assert_eq!(
        loss,
        head_loss(&inst.model, &inst.graphs, &inst.batch).unwrap()
    );
    let mut m = inst.model.clone();
    m.axpy(-0.0, &grad);
    assert_eq!(m, inst.model);
}

#[test]
fn start_token_embeds_to_zero() {
    let dims = Dims {
        vocab: 4,
        d: 3,
        d_p: 3,
        d_enc: 3,
        d_att: 3,
        d_joint: 1,
        layers: 0,
    };
    let m = TcpgenModel::init(ModelConfig::new(dims), Array2::eye(3), 1).unwrap();
    assert_eq!(prev_embedding(&m, 0).unwrap(), Array1::<f64>::zeros(3));
    assert!(prev_embedding(&m, 5).is_err());
}
