use boltzgap::kernels::CrossSection;
use boltzgap::mesh::{build_mesh, BasisSpec, OperatorParams};
use boltzgap::sphere::{angular_integral, sweep_all_targets, SweepOptions, SweepScratch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (d, alpha, normalized) in [
        (2usize, -1.0, true),
        (2, 0.5, false),
        (3, -2.0, true),
        (3, 0.0, false),
    ] {
        let mesh = build_mesh(3.0, 3, d).unwrap();
        let basis = BasisSpec::new(1).unwrap();
        let cs = CrossSection::new(OperatorParams::with_normalization(d, 0.0, alpha, normalized).unwrap());
        let opts = SweepOptions { panel_order: 12, panel_ratio: 1.3, max_panels: 80, ..SweepOptions::default() };
        let mut scratch = SweepScratch::for_mesh(&mesh);
        let mut out = Vec::new();
        for case in 0..6 {
            let mut v = [0.0f64; 3];
            let mut u = [0.0f64; 3];
            for j in 0..d {
                v[j] = rng.gen_range(-2.5..2.5);
                u[j] = rng.gen_range(-2.0..2.0);
            }
            sweep_all_targets(&v[..d], &u[..d], &mesh, &basis, &cs, &opts, &mut scratch, &mut out).unwrap();
            let scale: f64 = out.iter().map(|(_, g)| g.iter().fold(0.0f64, |m, x| m.max(x.abs()))).fold(0.0, f64::max).max(1e-10);
            let mut worst = 0.0f64;
            let mut wdat = (0usize, 0usize, 0.0, 0.0);
            for &(cell, gvec) in &out {
                for i in 0..basis.n_local(d) {
                    let r = angular_integral(&v[..d], &u[..d], mesh.multi(cell), i, &cs, &mesh, &basis, 1e-10).unwrap();
                    if (gvec[i] - r).abs() > worst {
                        worst = (gvec[i] - r).abs();
                        wdat = (cell, i, gvec[i], r);
                    }
                }
            }
            println!("d={d} alpha={alpha} case {case}: worst abs diff {:.3e} (rel to scale {:.3e}) cell={} i={} sweep={:.9} ref={:.9}",
                worst, worst / scale, wdat.0, wdat.1, wdat.2, wdat.3);
        }
    }
}
