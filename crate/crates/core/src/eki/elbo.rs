use crate::error::{Error, Result};

pub const MAX_TOY_SIZE: usize = 16;

/// A finite weight space: prior and variational mass functions plus the
/// log-likelihood of the data under each weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPosterior {
    pub prior: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub log_evidence: f64,
    /// `KL(q ‖ p(W|D))`
    pub kl_posterior: f64,
    /// `E_q[log p(D|W)] − KL(q ‖ p(W))`
    pub elbo: f64,
}

fn check_mass(name: &str, m: &[f64]) -> Result<()> {
    if m.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::input(format!("{name} must be strictly positive")));
    }
    let total: f64 = m.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Exact evidence, posterior divergence and ELBO by enumeration.
pub fn elbo_terms(toy: &ToyPosterior) -> Result<ElboTerms> {
    let n = toy.prior.len();
    if n == 0 || n > MAX_TOY_SIZE {
        return Err(Error::input(format!(
            "toy space must hold 1..={MAX_TOY_SIZE} weight vectors, got {n}"
        )));
    }
    if toy.log_likelihood.len() != n || toy.q.len() != n {
        return Err(Error::shape(
            "prior, likelihood and q must have equal length",
        ));
    }
    if toy.log_likelihood.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite log-likelihood"));
    }
    check_mass("prior", &toy.prior)?;
    check_mass("q", &toy.q)?;
    // log p(D) = log Σ p(W) p(D|W), shifted by the largest term
    let log_joint: Vec<f64> = toy
        .prior
        .iter()
        .zip(&toy.log_likelihood)
        .map(|(p, ll)| p.ln() + ll)
        .collect();
    let peak = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_evidence = peak + log_joint.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
    let mut kl_posterior = 0.0;
    let mut expected_ll = 0.0;
    let mut kl_prior = 0.0;
    for k in 0..n {
        let q = toy.q[k];
        let log_post = log_joint[k] - log_evidence;
        kl_posterior += q * (q.ln() - log_post);
        expected_ll += q * toy.log_likelihood[k];
        kl_prior += q * (q.ln() - toy.prior[k].ln());
    }
    Ok(ElboTerms {
        log_evidence,
        kl_posterior,
        elbo: expected_ll - kl_prior,
    })
}

/// `|log p(D) − (KL(q ‖ p(W|D)) + ELBO(q))|`, zero up to rounding for any q.
pub fn elbo_identity_check(toy: &ToyPosterior) -> Result<f64> {
    let t = elbo_terms(toy)?;
    Ok((t.log_evidence - (t.kl_posterior + t.elbo)).abs())
}
