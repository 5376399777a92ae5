use super::prompt::TripletDescription;
use crate::numkit::dot;
use crate::world::{Triplet, World};

fn nearest(world: &World, v: &[f64]) -> usize {
    argbest(world, v, |a, b| a > b)
}

fn argbest(world: &World, v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    let mut best_score = dot(&world.concepts[0], v);
    for (k, c) in world.concepts.iter().enumerate().skip(1) {
        let s = dot(c, v);
        if better(s, best_score) {
            best = k;
            best_score = s;
        }
    }
    best
}

/// Renders a triplet as text by decoding each embedding against the concept
/// dictionary. The modification is mapped back through the modality map and
/// read as "from the most negative concept to the most positive one".
pub fn describe_triplet(world: &World, triplet: &Triplet) -> TripletDescription {
    let d = world.dim();
    let m = &world.modality_map;
    let mut delta = vec![0.0; d];
    for (r, &zm) in triplet.z_m.iter().enumerate() {
        for (k, dv) in delta.iter_mut().enumerate() {
            *dv += m.get(r, k) * zm;
        }
    }
    let to = argbest(world, &delta, |a, b| a > b);
    let from = argbest(world, &delta, |a, b| a < b);
    TripletDescription {
        reference: format!("an item showing concept {}", nearest(world, &triplet.z_r)),
        modification: format!("turn concept {from} into concept {to}"),
        target: format!("an item showing concept {}", nearest(world, &triplet.z_t)),
    }
}
