//! Draw-file persistence.
//!
//! Format: JSON lines. The first record is a header carrying shapes, the
//! learning rate, the seed, and sampling metadata; every following line is
//! one draw with flat row-major `phi` and `psi` plus its chain id and
//! tempered log-posterior. serde_json prints doubles with the shortest
//! representation that round-trips exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamState;

use super::PosteriorDraws;

#[derive(Serialize, Deserialize)]
struct Header {
    phi_shape: [usize; 3],
    psi_shape: [usize; 3],
    lambda: f64,
    seed: u64,
    num_chains: usize,
    draws_per_chain: usize,
    accept_rate: f64,
    divergence_rate: f64,
    divergence_warning: bool,
    step_sizes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DrawRecord {
    chain: usize,
    log_post: f64,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

pub fn save_draws(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::config("cannot save an empty draw set"));
    }
    let (g, t, k) = draws.draws[0].phi.dim();
    let (k2, t2, v) = draws.draws[0].psi.dim();
    let header = Header {
        phi_shape: [g, t, k],
        psi_shape: [k2, t2, v],
        lambda: draws.lambda,
        seed: draws.seed,
        num_chains: draws.num_chains,
        draws_per_chain: draws.draws_per_chain,
        accept_rate: draws.accept_rate,
        divergence_rate: draws.divergence_rate,
        divergence_warning: draws.divergence_warning,
        step_sizes: draws.step_sizes.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for ((draw, &chain), &log_post) in
        draws.draws.iter().zip(&draws.chain_ids).zip(&draws.log_posts)
    {
        let rec = DrawRecord {
            chain,
            log_post,
            phi: draw.phi.iter().cloned().collect(),
            psi: draw.psi.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_draws(path: &Path) -> Result<PosteriorDraws> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty draw file", path.display())))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::data(format!("{}: bad header: {e}", path.display())))?;
    let phi_shape = (header.phi_shape[0], header.phi_shape[1], header.phi_shape[2]);
    let psi_shape = (header.psi_shape[0], header.psi_shape[1], header.psi_shape[2]);

    let mut draws = Vec::new();
    let mut log_posts = Vec::new();
    let mut chain_ids = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{}: draw {}: {e}", path.display(), i + 1)))?;
        let mut flat = rec.phi;
        flat.extend(rec.psi);
        let params = ParamState::from_flat(&flat, phi_shape, psi_shape)
            .map_err(|e| Error::data(format!("{}: draw {}: {e}", path.display(), i + 1)))?;
        draws.push(params);
        log_posts.push(rec.log_post);
        chain_ids.push(rec.chain);
    }
    let expected = header.num_chains * header.draws_per_chain;
    if draws.len() != expected {
        return Err(Error::data(format!(
            "{}: has {} draws, header promises {}",
            path.display(),
            draws.len(),
            expected
        )));
    }
    Ok(PosteriorDraws {
        draws,
        log_posts,
        chain_ids,
        lambda: header.lambda,
        seed: header.seed,
        accept_rate: header.accept_rate,
        divergence_rate: header.divergence_rate,
        divergence_warning: header.divergence_warning,
        step_sizes: header.step_sizes,
        num_chains: header.num_chains,
        draws_per_chain: header.draws_per_chain,
    })
}
