use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{Descriptor, DESCRIPTOR_LEN};

fn normalize(v: &mut Descriptor) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit vectors drawn from a mixture of `modes` Gaussians. Like SURF
/// descriptors, the odd (absolute-sum) components are non-negative.
pub fn surf_like_descriptors(n: usize, modes: usize, spread: f32, seed: u64) -> Vec<Descriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0f32, 1.0).unwrap();
    let centers: Vec<Descriptor> = (0..modes.max(1))
        .map(|_| {
            let mut c = [0f32; DESCRIPTOR_LEN];
            c.iter_mut().for_each(|v| *v = unit.sample(&mut rng));
            normalize(&mut c);
            c
        })
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            let mut v = [0f32; DESCRIPTOR_LEN];
            for (i, (o, &m)) in v.iter_mut().zip(c).enumerate() {
                let x = m + spread * unit.sample(&mut rng);
                *o = if i % 2 == 1 { x.abs() } else { x };
            }
            normalize(&mut v);
            v
        })
        .collect()
}

/// Adds isotropic noise of standard deviation `sigma` and renormalizes.
pub fn perturb_descriptor(d: &Descriptor, sigma: f32, rng: &mut impl Rng) -> Descriptor {
    let noise = Normal::new(0f32, sigma).unwrap();
    let mut out = *d;
    out.iter_mut().for_each(|v| *v += noise.sample(rng));
    normalize(&mut out);
    out
}
