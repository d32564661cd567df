#![allow(dead_code)]

use std::path::{Path, PathBuf};

use deblur::cli::{execute, Cli};
use deblur::{ppm, CliResult};
use deblur_core::{model, synthetic, Image, ModelConfig, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Image with every sample on the 8-bit grid, so PPM files hold it exactly.
pub fn quantized_image(h: usize, w: usize, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _, _| r.gen_range(0u8..=255) as f32 / 255.0)
}

pub fn write_ppm(path: &Path, img: &Image) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    ppm::save_image(img, path).unwrap();
}

/// `root/blur` and `root/sharp` holding `n` synthetic pairs `p0.ppm`, `p1.ppm`, ...
pub fn synthetic_tree(root: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    for (i, p) in synthetic::pairs(n, size, seed).iter().enumerate() {
        write_ppm(&root.join("blur").join(format!("p{i}.ppm")), &p.blur);
        write_ppm(&root.join("sharp").join(format!("p{i}.ppm")), &p.sharp);
    }
    root.to_path_buf()
}

/// Toy parameters with the output convolution zeroed: the model returns its input.
pub fn zero_residual_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f32> {
    let mut p = model::build::<f32>(cfg, seed).unwrap();
    p.get_mut("output.weight").unwrap().data_mut().fill(0.0);
    p
}

pub fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("deblur").chain(list.iter().copied()).map(String::from).collect()
}

/// Parses and executes, returning the command's message or error.
pub fn exec(list: &[&str]) -> CliResult<String> {
    use clap::Parser;
    let cli = Cli::try_parse_from(args(list)).expect("arguments parse");
    execute(&cli)
}

/// Exit code of a full invocation.
pub fn code(list: &[&str]) -> i32 {
    deblur::cli::run(args(list))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
