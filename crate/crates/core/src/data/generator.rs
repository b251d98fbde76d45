//! Synthetic trigger-induced impressions with a known click process.
//!
//! A user holds two interest prototypes; `a(u, v)` is the best match of item `v`
//! among them. Each session draws a user, a trigger item and a hidden intent
//! `g ~ Bernoulli(σ(κ a(u, t) + b0))` shared by all its impressions. With
//! `h = normalize(t + η · mean of same-category history)`, a target is clicked with
//! probability `λ [g σ(s⟨h, i⟩ + c) + (1 - g) σ(s a(u, i) + c)] + (1 - λ) σ(s a(u, i) + c)`,
//! and `y_t = g`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FieldSpec, RawBehavior, RawSample, SchemaConfig};
use crate::tensor::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub num_destinations: usize,
    pub num_tags: usize,
    pub latent_dim: usize,
    /// Total impressions, over all splits.
    pub num_impressions: usize,
    /// Share of the click process driven by intent, in `[0, 1]`.
    pub lambda: f64,
    /// κ: how strongly user/trigger affinity drives intent.
    pub intent_strength: f64,
    /// Population rate of `g = 1`; the intercept `b0` is solved to match it.
    pub trigger_click_rate: f64,
    /// s: sharpness of the affinity-to-click maps.
    pub click_sharpness: f64,
    /// c: intercept of the affinity-to-click maps; sets the overall click rate.
    pub click_bias: f64,
    /// Weight on the user/item affinity when sampling histories (`∝ exp(w a(u, v))`).
    pub history_affinity: f64,
    /// Same, for triggers. Lower values bring more off-profile triggers.
    pub trigger_affinity: f64,
    pub history_min: usize,
    pub history_max: usize,
    pub session_min: usize,
    pub session_max: usize,
    /// Probability a target is drawn from the trigger's category.
    pub related_target_rate: f64,
    /// Probability an item's destination and tag follow its category's usual value.
    pub attribute_correlation: f64,
    /// Weight of same-category history next to the trigger in the intent interest.
    pub intent_history_weight: f64,
    pub max_behaviors: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 1000,
            num_categories: 20,
            num_destinations: 10,
            num_tags: 30,
            latent_dim: 8,
            num_impressions: 24_000,
            lambda: 1.0,
            intent_strength: 4.0,
            trigger_click_rate: 0.5,
            click_sharpness: 4.0,
            click_bias: -1.5,
            history_affinity: 4.0,
            trigger_affinity: 0.0,
            history_min: 5,
            history_max: 20,
            session_min: 1,
            session_max: 8,
            related_target_rate: 0.7,
            attribute_correlation: 0.8,
            intent_history_weight: 1.0,
            max_behaviors: 20,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("num_destinations", self.num_destinations),
            ("num_tags", self.num_tags),
            ("latent_dim", self.latent_dim),
            ("num_impressions", self.num_impressions),
            ("session_min", self.session_min),
            ("max_behaviors", self.max_behaviors),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let unit = [
            ("lambda", self.lambda),
            ("related_target_rate", self.related_target_rate),
            ("attribute_correlation", self.attribute_correlation),
        ];
        if let Some((name, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
        if !(self.trigger_click_rate > 0.0 && self.trigger_click_rate < 1.0) {
            return Err(Error::Config(
                "trigger_click_rate must lie in (0, 1)".into(),
            ));
        }
        if self.history_min > self.history_max || self.session_min > self.session_max {
            return Err(Error::Config("min bounds exceed max bounds".into()));
        }
        if self.history_max > self.max_behaviors {
            return Err(Error::Config(
                "history_max may not exceed max_behaviors".into(),
            ));
        }
        if self.num_items < self.num_categories {
            return Err(Error::Config("need at least one item per category".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator config always serializes")
    }

    /// Feature layout of the generated records: D = 16, user side 12, one context field.
    pub fn schema(&self) -> Result<FeatureSchema> {
        let items = SchemaConfig::item_fields(
            self.num_items + 1,
            self.num_categories + 1,
            self.num_destinations + 1,
            self.num_tags + 1,
        );
        FeatureSchema::build(SchemaConfig {
            max_behaviors: self.max_behaviors,
            hard_filter: vec!["category".into(), "destination".into(), "tag".into()],
            user: vec![
                FieldSpec::new("user_id", self.num_users + 1, 8),
                FieldSpec::new("segment", SEGMENTS + 1, 4),
            ],
            behavior: items.clone(),
            trigger: items.clone(),
            target: items,
            context: vec![FieldSpec::new("hour", 25, 4)],
        })
    }
}

const SEGMENTS: usize = 8;

/// Closed-form click process of a generated dataset, keyed by raw IDs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthOracle {
    pub lambda: f64,
    pub intent_strength: f64,
    pub intent_bias: f64,
    pub click_sharpness: f64,
    pub click_bias: f64,
    pub intent_history_weight: f64,
    /// Entry `u - 1` holds user `u`'s interest prototypes.
    pub users: Vec<Vec<Vec<f64>>>,
    /// Row `i - 1` is item `i`'s latent.
    pub items: Vec<Vec<f64>>,
    /// Raw category ID of item `i` at `i - 1`.
    pub categories: Vec<u64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best match of `v` among a user's interest prototypes.
fn affinity(prototypes: &[Vec<f64>], v: &[f64]) -> f64 {
    prototypes
        .iter()
        .map(|p| dot(p, v))
        .fold(f64::NEG_INFINITY, f64::max)
}

impl GroundTruthOracle {
    fn user(&self, id: u64) -> Result<&[Vec<f64>]> {
        lookup(&self.users, id, "user")
    }

    fn item(&self, id: u64) -> Result<&[f64]> {
        lookup(&self.items, id, "item")
    }

    /// `P(g = 1 | u, t)`.
    pub fn intent_probability(&self, user: u64, trigger: u64) -> Result<f64> {
        let a = affinity(self.user(user)?, self.item(trigger)?);
        Ok(sigmoid(self.intent_strength * a + self.intent_bias))
    }

    /// What an intent-driven user is after: the trigger plus their past
    /// behaviors in the trigger's category.
    pub fn intent_interest(&self, trigger: u64, history: &[u64]) -> Result<Vec<f64>> {
        let t = self.item(trigger)?;
        let cat = self.categories[trigger as usize - 1];
        let mut sum = vec![0.0; t.len()];
        let mut n = 0usize;
        for &b in history {
            if self.categories.get((b as usize).wrapping_sub(1)) == Some(&cat) {
                sum.iter_mut().zip(self.item(b)?).for_each(|(s, v)| *s += v);
                n += 1;
            }
        }
        let w = if n == 0 {
            0.0
        } else {
            self.intent_history_weight / n as f64
        };
        Ok(normalize(
            t.iter().zip(&sum).map(|(a, s)| a + w * s).collect(),
        ))
    }

    /// Click probability given the (hidden) intent.
    pub fn click_given_intent(
        &self,
        user: u64,
        trigger: u64,
        target: u64,
        history: &[u64],
        intent: bool,
    ) -> Result<f64> {
        let (u, i) = (self.user(user)?, self.item(target)?);
        let s = self.click_sharpness;
        let c = self.click_bias;
        let casual = sigmoid(s * affinity(u, i) + c);
        if !intent {
            return Ok(casual);
        }
        let driven = sigmoid(s * dot(&self.intent_interest(trigger, history)?, i) + c);
        Ok(casual + self.lambda * (driven - casual))
    }

    /// Click probability with the intent marginalized out; the Bayes-optimal score.
    pub fn click_probability(
        &self,
        user: u64,
        trigger: u64,
        target: u64,
        history: &[u64],
    ) -> Result<f64> {
        let pi = self.intent_probability(user, trigger)?;
        let off = self.click_given_intent(user, trigger, target, history, false)?;
        let on = self.click_given_intent(user, trigger, target, history, true)?;
        // exactly `off` when λ = 0
        Ok(off + pi * (on - off))
    }

    pub fn score(&self, sample: &RawSample) -> Result<f64> {
        let first = |v: &[u64], what: &str| {
            v.first()
                .copied()
                .ok_or_else(|| Error::contract(format!("sample has no {what} id")))
        };
        let history: Vec<u64> = sample
            .behaviors
            .iter()
            .filter_map(|b| b.attrs.first().copied())
            .collect();
        self.click_probability(
            first(&sample.user, "user")?,
            first(&sample.trigger, "trigger")?,
            first(&sample.target, "target")?,
            &history,
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn lookup<'a, T>(rows: &'a [Vec<T>], id: u64, what: &str) -> Result<&'a [T]> {
    (id as usize)
        .checked_sub(1)
        .and_then(|i| rows.get(i))
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Index {
            what: format!("oracle {what} table"),
            index: id as usize,
            size: rows.len() + 1,
        })
}

struct Catalog {
    category: Vec<usize>,
    destination: Vec<usize>,
    tag: Vec<usize>,
    latent: Vec<Vec<f64>>,
    by_category: Vec<Vec<usize>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn build_catalog(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Catalog {
    let k = cfg.latent_dim;
    let cat_vecs: Vec<Vec<f64>> = (0..cfg.num_categories)
        .map(|_| normalize(gaussian(rng, k, 1.0)))
        .collect();
    let dest_vecs: Vec<Vec<f64>> = (0..cfg.num_destinations)
        .map(|_| normalize(gaussian(rng, k, 1.0)))
        .collect();
    let tag_vecs: Vec<Vec<f64>> = (0..cfg.num_tags)
        .map(|_| normalize(gaussian(rng, k, 1.0)))
        .collect();
    let usual_dest: Vec<usize> = (0..cfg.num_categories)
        .map(|_| rng.gen_range(0..cfg.num_destinations))
        .collect();
    let usual_tag: Vec<usize> = (0..cfg.num_categories)
        .map(|_| rng.gen_range(0..cfg.num_tags))
        .collect();
    let mut cat = Catalog {
        category: Vec::new(),
        destination: Vec::new(),
        tag: Vec::new(),
        latent: Vec::new(),
        by_category: vec![Vec::new(); cfg.num_categories],
    };
    for i in 0..cfg.num_items {
        // every category gets at least one item
        let c = if i < cfg.num_categories {
            i
        } else {
            rng.gen_range(0..cfg.num_categories)
        };
        let d = if rng.gen_bool(cfg.attribute_correlation) {
            usual_dest[c]
        } else {
            rng.gen_range(0..cfg.num_destinations)
        };
        let t = if rng.gen_bool(cfg.attribute_correlation) {
            usual_tag[c]
        } else {
            rng.gen_range(0..cfg.num_tags)
        };
        let noise = gaussian(rng, k, 0.3 / (k as f64).sqrt());
        let v: Vec<f64> = (0..k)
            .map(|j| cat_vecs[c][j] + 0.5 * dest_vecs[d][j] + 0.5 * tag_vecs[t][j] + noise[j])
            .collect();
        cat.category.push(c);
        cat.destination.push(d);
        cat.tag.push(t);
        cat.latent.push(normalize(v));
        cat.by_category[c].push(i);
    }
    cat
}

fn item_attrs(cat: &Catalog, item: usize) -> Vec<u64> {
    vec![
        item as u64 + 1,
        cat.category[item] as u64 + 1,
        cat.destination[item] as u64 + 1,
        cat.tag[item] as u64 + 1,
    ]
}

/// Solves `mean σ(κ a_j + b) = rate` for `b` by bisection.
fn solve_intercept(affinities: &[f64], kappa: f64, rate: f64) -> f64 {
    let mean = |b: f64| {
        affinities
            .iter()
            .map(|a| sigmoid(kappa * a + b))
            .sum::<f64>()
            / affinities.len() as f64
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a dataset and the oracle that produced it. Same config, same output.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<(Vec<RawSample>, GroundTruthOracle)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rng = &mut rng;
    let cat = build_catalog(cfg, rng);
    let k = cfg.latent_dim;

    // one interest prototype per favorite category
    let mut favorites = Vec::with_capacity(cfg.num_users);
    let mut users = Vec::with_capacity(cfg.num_users);
    for _ in 0..cfg.num_users {
        let first = rng.gen_range(0..cfg.num_categories);
        let second = (first + rng.gen_range(1..cfg.num_categories.max(2))) % cfg.num_categories;
        let protos: Vec<Vec<f64>> = [first, second]
            .iter()
            .map(|&c| {
                let pick = cat.by_category[c][rng.gen_range(0..cat.by_category[c].len())];
                let noise = gaussian(rng, k, 0.3 / (k as f64).sqrt());
                normalize(
                    cat.latent[pick]
                        .iter()
                        .zip(&noise)
                        .map(|(a, b)| a + b)
                        .collect(),
                )
            })
            .collect();
        favorites.push(first);
        users.push(protos);
    }

    // per-user preference over the catalog
    let preference = |weight: f64| -> Vec<WeightedIndex<f64>> {
        users
            .iter()
            .map(|u| {
                let w: Vec<f64> = cat
                    .latent
                    .iter()
                    .map(|v| (weight * affinity(u, v)).exp())
                    .collect();
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect()
    };
    let prefs = preference(cfg.history_affinity);
    let trigger_prefs = preference(cfg.trigger_affinity);
    let histories: Vec<Vec<usize>> = prefs
        .iter()
        .map(|p| {
            let n = rng.gen_range(cfg.history_min..=cfg.history_max);
            (0..n).map(|_| p.sample(rng)).collect()
        })
        .collect();

    // calibrate the intent intercept on a dedicated stream
    let mut cal_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let affinities: Vec<f64> = (0..100_000)
        .map(|_| {
            let u = cal_rng.gen_range(0..cfg.num_users);
            let t = trigger_prefs[u].sample(&mut cal_rng);
            affinity(&users[u], &cat.latent[t])
        })
        .collect();
    let intent_bias = solve_intercept(&affinities, cfg.intent_strength, cfg.trigger_click_rate);

    let oracle = GroundTruthOracle {
        lambda: cfg.lambda,
        intent_strength: cfg.intent_strength,
        intent_bias,
        click_sharpness: cfg.click_sharpness,
        click_bias: cfg.click_bias,
        intent_history_weight: cfg.intent_history_weight,
        users,
        items: cat.latent.clone(),
        categories: cat.category.iter().map(|&c| c as u64 + 1).collect(),
    };

    let mut samples = Vec::with_capacity(cfg.num_impressions);
    let mut session = 0i64;
    while samples.len() < cfg.num_impressions {
        let u = rng.gen_range(0..cfg.num_users);
        let uid = u as u64 + 1;
        let trigger = trigger_prefs[u].sample(rng);
        let history: Vec<u64> = histories[u].iter().map(|&b| b as u64 + 1).collect();
        let intent = rng.gen_bool(oracle.intent_probability(uid, trigger as u64 + 1)?);
        let n = rng.gen_range(cfg.session_min..=cfg.session_max);
        let hour = rng.gen_range(1..=24u64);
        let start = 1_000_000 + session * 3600;
        for _ in 0..n {
            if samples.len() == cfg.num_impressions {
                break;
            }
            let target = if rng.gen_bool(cfg.related_target_rate) {
                let pool = &cat.by_category[cat.category[trigger]];
                pool[rng.gen_range(0..pool.len())]
            } else {
                rng.gen_range(0..cfg.num_items)
            };
            let p = oracle.click_given_intent(
                uid,
                trigger as u64 + 1,
                target as u64 + 1,
                &history,
                intent,
            )?;
            let label = rng.gen_bool(p) as u8;
            samples.push(RawSample {
                user: vec![uid, (favorites[u] % SEGMENTS) as u64 + 1],
                behaviors: histories[u]
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| RawBehavior {
                        attrs: item_attrs(&cat, b),
                        timestamp: start - 86_400 + 60 * j as i64,
                    })
                    .collect(),
                trigger: item_attrs(&cat, trigger),
                target: item_attrs(&cat, target),
                context: vec![hour],
                label,
                trigger_label: intent as u8,
            });
        }
        session += 1;
    }
    Ok((samples, oracle))
}
