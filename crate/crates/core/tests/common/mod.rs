#![allow(dead_code)]

use airknow::world::{generate_world, write_dataset, Dataset, World, WorldSpec};

/// Ground-truth corruption tags, read back through the dataset file since
/// the library keeps them out of its public API.
pub fn tags(ds: &Dataset) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(ds, &path).unwrap();
    std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["oracle_corruption"].as_str().unwrap().to_string()
        })
        .collect()
}

pub fn clean_mask(ds: &Dataset) -> Vec<bool> {
    tags(ds).iter().map(|t| t == "none").collect()
}

pub fn world(dim: usize, concepts: usize, eta: f64, seed: u64) -> World {
    generate_world(&WorldSpec {
        embed_dim: dim,
        concept_count: concepts,
        intra_noise: eta,
        seed,
    })
    .unwrap()
}
