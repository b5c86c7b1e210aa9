//! Scheduler abstraction and the three non-learning baselines: best-effort
//! (max capacities), random selection, and greedy selection (replay of the
//! cheapest round seen so far).

use crate::env::{EnvState, StepOutcome};
use crate::num::Real;
use rand::{Rng, RngCore};

/// A scheduler: maps a state to a raw action in [−1, 1]^{2K} and may learn
/// from round outcomes.
pub trait Agent<R: Real> {
    fn act(&mut self, state: &EnvState<R>, rng: &mut dyn RngCore) -> Vec<R>;

    /// Feedback after the round; baselines other than the greedy one ignore it.
    fn observe(&mut self, _outcome: &StepOutcome<R>) {}

    /// Called between episodes for agents with per-episode state.
    fn reset_episode(&mut self) {}

    fn name(&self) -> &'static str;
}

/// Best-effort: every worker at its maximum capacities, every round.
#[derive(Debug, Default, Clone, Copy)]
pub struct BestEffort;

impl<R: Real> Agent<R> for BestEffort {
    fn act(&mut self, state: &EnvState<R>, _rng: &mut dyn RngCore) -> Vec<R> {
        vec![R::one(); 2 * state.k()]
    }

    fn name(&self) -> &'static str {
        "bes"
    }
}

/// Random selection: every entry i.i.d. uniform over [−1, 1].
#[derive(Debug, Default, Clone, Copy)]
pub struct RandomSelection;

impl<R: Real> Agent<R> for RandomSelection {
    fn act(&mut self, state: &EnvState<R>, rng: &mut dyn RngCore) -> Vec<R> {
        (0..2 * state.k())
            .map(|_| R::of(rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn name(&self) -> &'static str {
        "rss"
    }
}

/// Greedy selection: random until something works, then replay the joint
/// action of the cheapest round observed so far (strict improvement only).
/// Memory spans the whole run, not one episode.
#[derive(Debug, Clone)]
pub struct GreedySelection<R: Real> {
    best_action: Option<Vec<R>>,
    best_round_energy: R,
    last_action: Option<Vec<R>>,
}

impl<R: Real> Default for GreedySelection<R> {
    fn default() -> Self {
        GreedySelection {
            best_action: None,
            best_round_energy: R::infinity(),
            last_action: None,
        }
    }
}

impl<R: Real> GreedySelection<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_round_energy(&self) -> R {
        self.best_round_energy
    }

    pub fn best_action(&self) -> Option<&[R]> {
        self.best_action.as_deref()
    }
}

impl<R: Real> Agent<R> for GreedySelection<R> {
    fn act(&mut self, state: &EnvState<R>, rng: &mut dyn RngCore) -> Vec<R> {
        let action = match &self.best_action {
            Some(best) => best.clone(),
            None => (0..2 * state.k())
                .map(|_| R::of(rng.gen_range(-1.0..1.0)))
                .collect(),
        };
        self.last_action = Some(action.clone());
        action
    }

    fn observe(&mut self, outcome: &StepOutcome<R>) {
        let total = outcome.comp.iter().copied().sum::<R>()
            + outcome.tx.iter().copied().sum::<R>()
            + outcome.wasted.iter().copied().sum::<R>();
        if total < self.best_round_energy {
            if let Some(last) = &self.last_action {
                self.best_round_energy = total;
                self.best_action = Some(last.clone());
            }
        }
    }

    fn name(&self) -> &'static str {
        "gss"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;
    use crate::env::Env;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn state(k: usize) -> EnvState<f64> {
        let mut env: Env<f64> = Env::new(EnvConfig::static_default(k), 1).unwrap();
        env.reset(0)
    }

    #[test]
    fn bes_is_all_ones() {
        let mut agent = BestEffort;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let act = agent.act(&state(5), &mut rng);
        assert_eq!(act, vec![1.0; 10]);
    }

    #[test]
    fn rss_is_reproducible_and_in_range() {
        let mut agent = RandomSelection;
        let s = state(4);
        let a1 = agent.act(&s, &mut ChaCha12Rng::seed_from_u64(9));
        let a2 = agent.act(&s, &mut ChaCha12Rng::seed_from_u64(9));
        assert_eq!(a1, a2);
        assert!(a1.iter().all(|x| (-1.0..1.0).contains(x)));
        assert_eq!(a1.len(), 8);
    }

    #[test]
    fn rss_decoded_mean_matches_monte_carlo() {
        // decode(uniform) has mean cap·(1 − deadzone²)/2: the mass below the
        // dead-zone collapses to zero, the rest is uniform over [dz·cap, cap]
        let mut agent = RandomSelection;
        let s = state(1);
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let cap = 3e9;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = agent.act(&s, &mut rng);
            sum += crate::env::decode_entry(a[0], cap, 0.05);
        }
        let mean = sum / n as f64;
        let expect = cap * (1.0 - 0.05 * 0.05) / 2.0;
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean {mean:.4e} vs {expect:.4e}"
        );
    }

    #[test]
    fn gss_starts_random_then_replays_best() {
        let mut agent: GreedySelection<f64> = GreedySelection::new();
        let s = state(3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let first = agent.act(&s, &mut rng);
        assert!(agent.best_action().is_none());

        let outcome_with = |energy: f64| {
            let mut env: Env<f64> = Env::new(EnvConfig::static_default(3), 1).unwrap();
            env.reset(0);
            let mut out = env.step(&vec![1.0; 6]).unwrap();
            out.comp = vec![energy, 0.0, 0.0];
            out.tx = vec![0.0; 3];
            out.wasted = vec![0.0; 3];
            out
        };

        agent.observe(&outcome_with(5.0));
        assert_eq!(agent.best_round_energy(), 5.0);
        assert_eq!(agent.best_action().unwrap(), first.as_slice());

        let second = agent.act(&s, &mut rng);
        assert_eq!(second, first, "replays the stored best");

        agent.observe(&outcome_with(3.0));
        assert_eq!(agent.best_round_energy(), 3.0);

        // equal energy keeps the incumbent
        let third = agent.act(&s, &mut rng);
        agent.observe(&outcome_with(3.0));
        assert_eq!(agent.best_action().unwrap(), third.as_slice());
        assert_eq!(agent.best_round_energy(), 3.0);
    }
}
