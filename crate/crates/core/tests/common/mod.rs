#![allow(dead_code)]

use std::path::PathBuf;

use ftcons::graph::{build_consensus_matrix, build_laplacian, ConsensusProjection, Topology};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// SVD pseudo-inverse, independent of the Cholesky-based one in the library.
fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().pseudo_inverse(1e-12).expect("svd pseudo-inverse")
}

/// Literal dense evaluation of every criteria matrix from full Kronecker
/// products on the stacked `nN` space.
pub struct Dense {
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub lf: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
}

pub struct Instance {
    pub topology: Topology,
    pub proj: ConsensusProjection,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k3_square: DMatrix<f64>,
    pub k3_out: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn dense_oracle(inst: &Instance) -> Dense {
    let n = inst.k1.nrows();
    let agents = inst.topology.agents();
    let l = inst.c.nrows();
    let lap = &inst.topology.laplacian;
    let me = inst.proj.m.kronecker(&eye(n));
    let mep = pinv(&me);
    let r = -(&me * eye(agents).kronecker(&inst.k1) * &mep);
    let s = -(&me * eye(agents).kronecker(&inst.k2) * lap.kronecker(&eye(n)) * &mep);
    let p = mep.transpose() * &mep;
    let s1 = -(&me
        * eye(agents).kronecker(&inst.k3_out)
        * lap.kronecker(&eye(l))
        * eye(agents).kronecker(&inst.c)
        * &mep);
    let p1 = mep.transpose() * eye(agents).kronecker(&(inst.c.transpose() * &inst.c)) * &mep;

    let mut du = DMatrix::zeros(agents, agents);
    du[(0, 0)] = 1.0;
    let dub = eye(agents) - &du;
    let du_n = du.kronecker(&eye(n));
    let dub_n = dub.kronecker(&eye(n));
    let w = &me * &du_n * &mep;
    let rows = n * (agents - 1);
    let lf = (eye(rows) - &w).try_inverse().map(|inv| {
        let a1 = &inv * (-(&me * dub.kronecker(&inst.k1) * &mep) + &w);
        let b1 = -(&inv * &me * &dub_n * eye(agents).kronecker(&inst.k2) * lap.kronecker(&eye(n)) * &mep);
        let t2 = &inv * &me * &dub_n;
        let mut e1 = DMatrix::zeros(1, agents);
        e1[(0, 0)] = 1.0;
        let t1 = e1.kronecker(&eye(n));
        let dim = n * agents;
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DMatrix::zeros(dim, dim);
        let mut t = DMatrix::zeros(dim, dim);
        a.view_mut((0, 0), (n, n)).copy_from(&(-&inst.k3_square));
        a.view_mut((n, n), (rows, rows)).copy_from(&a1);
        b.view_mut((n, n), (rows, rows)).copy_from(&b1);
        t.view_mut((0, 0), (n, dim)).copy_from(&t1);
        t.view_mut((n, 0), (rows, dim)).copy_from(&t2);
        (a, b, t)
    });
    Dense { r, s, p, s1, p1, lf }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

/// Random connected undirected graph or balanced digraph (a directed cycle
/// plus random extra cycles), `N ≤ 4`, `n ≤ 3`.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let agents = rng.random_range(2..=4);
    let n = rng.random_range(1..=3);
    let mut a = DMatrix::zeros(agents, agents);
    if agents == 2 || rng.random_bool(0.5) {
        for i in 1..agents {
            let j = rng.random_range(0..i);
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        for i in 0..agents {
            for j in 0..i {
                if rng.random_bool(0.3) {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
            }
        }
    } else {
        for i in 0..agents {
            a[((i + 1) % agents, i)] = 1.0;
        }
        if agents == 4 && rng.random_bool(0.5) {
            // second cycle 0 -> 2 -> 0
            a[(2, 0)] = 1.0;
            a[(0, 2)] = 1.0;
        }
    }
    let topology = build_laplacian(&a).expect("valid adjacency");
    let row_norm = rng.random_range(0.3..1.5);
    let proj = build_consensus_matrix(&topology, row_norm, n).expect("projection");
    let l = rng.random_range(1..=n);
    let mut c = random_matrix(rng, l, n);
    for k in 0..l {
        c[(k, k)] += 3.0;
    }
    Instance {
        topology,
        proj,
        k1: random_matrix(rng, n, n),
        k2: random_matrix(rng, n, n),
        k3_square: random_matrix(rng, n, n),
        k3_out: random_matrix(rng, n, l),
        c,
    }
}

pub fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}

/// Largest deviation between the library assemblies and the dense oracle.
pub fn oracle_deviation(inst: &Instance) -> f64 {
    use ftcons::criteria::{build_rsp, build_s1p1, leader_follower_matrices};
    let dense = dense_oracle(inst);
    let lap = &inst.topology.laplacian;
    let (r, s, p) = build_rsp(&inst.proj, lap, &inst.k1, &inst.k2).unwrap();
    let (s1, p1) = build_s1p1(&inst.proj, lap, &inst.k3_out, &inst.c).unwrap();
    let mut worst = [
        max_diff(&r, &dense.r),
        max_diff(&s, &dense.s),
        max_diff(&p, &dense.p),
        max_diff(&s1, &dense.s1),
        max_diff(&p1, &dense.p1),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let lf = leader_follower_matrices(&inst.proj, lap, &inst.k1, &inst.k2, &inst.k3_square);
    match (lf, dense.lf) {
        (Ok(lf), Some((a, b, t))) => {
            worst = worst.max(max_diff(&lf.a, &a)).max(max_diff(&lf.b, &b)).max(max_diff(&lf.t, &t));
        }
        (Err(_), None) => {}
        (Ok(_), None) | (Err(_), Some(_)) => worst = f64::INFINITY,
    }
    worst
}
