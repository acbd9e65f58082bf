//! Synthetic biased biography corpora.
//!
//! Each record draws a gender from `Bernoulli(gender_skew)` (1 = male), then
//! a profession: with probability `profession_gender_bias` one whose
//! majority gender matches, otherwise one whose majority gender differs,
//! weighted by a Zipf-like base frequency. The bio mixes gender-correlated
//! words, profession signal words and neutral filler.
//!
//! Words are spelled with letters only (numbers written in base 26, `a`..`z`)
//! so they pass through text normalization unchanged, e.g. profession 3 word
//! 7 is `profdxh`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelMap, RawRecord, Record};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub num_professions: usize,
    /// Probability a record is male.
    pub gender_skew: f64,
    /// Probability a record's profession is one dominated by its gender.
    pub profession_gender_bias: f64,
    pub signal_words_per_profession: usize,
    /// Fraction of tokens drawn from the gendered vocabulary.
    pub gendered_word_rate: f64,
    pub bio_length: usize,
    pub seed: u64,
    /// Probability a gendered token comes from the writer's own gender list
    /// rather than the other one.
    pub gendered_word_fidelity: f64,
    /// Fraction of non-gendered tokens drawn from the profession's signal words.
    pub signal_word_rate: f64,
    /// Probability a profession signal token is drawn from a random other
    /// profession instead.
    pub signal_noise: f64,
    /// Base profession frequency is proportional to `1 / (rank + 1)^zipf`.
    pub profession_zipf: f64,
    pub gendered_vocab_size: usize,
    pub filler_vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            num_professions: 8,
            gender_skew: 0.62,
            profession_gender_bias: 0.9,
            signal_words_per_profession: 20,
            gendered_word_rate: 0.2,
            bio_length: 40,
            seed: 0,
            gendered_word_fidelity: 0.8,
            signal_word_rate: 0.3,
            signal_noise: 0.2,
            profession_zipf: 0.5,
            gendered_vocab_size: 20,
            filler_vocab_size: 300,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.num_professions < 1 {
            return bad("num_professions must be >= 1".into());
        }
        if self.n < self.num_professions * 10 {
            return bad(format!(
                "n must be at least 10 * num_professions = {}",
                self.num_professions * 10
            ));
        }
        if !(self.gender_skew > 0.0 && self.gender_skew < 1.0) {
            return bad("gender_skew must lie in (0, 1)".into());
        }
        for (name, v) in [
            ("profession_gender_bias", self.profession_gender_bias),
            ("gendered_word_rate", self.gendered_word_rate),
            ("gendered_word_fidelity", self.gendered_word_fidelity),
            ("signal_word_rate", self.signal_word_rate),
            ("signal_noise", self.signal_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.signal_words_per_profession < 1
            || self.gendered_vocab_size < 1
            || self.filler_vocab_size < 1
        {
            return bad("vocabulary sizes must be >= 1".into());
        }
        if self.bio_length < 1 {
            return bad("bio_length must be >= 1".into());
        }
        if !(self.profession_zipf >= 0.0 && self.profession_zipf.is_finite()) {
            return bad("profession_zipf must be non-negative".into());
        }
        Ok(())
    }
}

/// Parameters a generated corpus was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub gender_names: Vec<String>,
    pub profession_names: Vec<String>,
    /// Majority gender id per profession.
    pub majority_gender: Vec<u32>,
    /// Normalized base frequency per profession.
    pub profession_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub raw: Vec<RawRecord>,
    pub records: Vec<Record>,
    pub gender_map: LabelMap,
    pub profession_map: LabelMap,
    pub truth: GroundTruth,
}

/// Base-26 spelling with `a`..`z` as digits.
pub fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn profession_name(p: usize) -> String {
    format!("prof{}", letters(p))
}

fn pick_weighted<R: Rng>(rng: &mut R, items: &[usize], weights: &[f64]) -> usize {
    let total: f64 = items.iter().map(|&i| weights[i]).sum();
    let mut r = rng.gen::<f64>() * total;
    for &i in items {
        r -= weights[i];
        if r < 0.0 {
            return i;
        }
    }
    *items.last().expect("non-empty")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let k = cfg.num_professions;
    let gender_map = LabelMap::from_names(["female", "male"]);
    let profession_map = LabelMap::from_names((0..k).map(profession_name));
    // Names sort in numeric order only while they share a length; map through
    // the label map so ids stay lexicographic.
    let prof_id: Vec<u32> = (0..k)
        .map(|p| profession_map.id(&profession_name(p)).expect("present"))
        .collect();

    let majority: Vec<u32> = (0..k).map(|p| if p % 2 == 0 { 1 } else { 0 }).collect();
    let raw_w: Vec<f64> = (0..k)
        .map(|p| 1.0 / ((p + 1) as f64).powf(cfg.profession_zipf))
        .collect();
    let w_sum: f64 = raw_w.iter().sum();
    let weights: Vec<f64> = raw_w.iter().map(|w| w / w_sum).collect();
    let by_majority: [Vec<usize>; 2] = [
        (0..k).filter(|&p| majority[p] == 0).collect(),
        (0..k).filter(|&p| majority[p] == 1).collect(),
    ];
    let all: Vec<usize> = (0..k).collect();

    let gendered_words: [Vec<String>; 2] = [
        (0..cfg.gendered_vocab_size)
            .map(|j| format!("femx{}", letters(j)))
            .collect(),
        (0..cfg.gendered_vocab_size)
            .map(|j| format!("malx{}", letters(j)))
            .collect(),
    ];
    let signal_words: Vec<Vec<String>> = (0..k)
        .map(|p| {
            (0..cfg.signal_words_per_profession)
                .map(|j| format!("prof{}x{}", letters(p), letters(j)))
                .collect()
        })
        .collect();
    let filler: Vec<String> = (0..cfg.filler_vocab_size)
        .map(|j| format!("fillx{}", letters(j)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = Vec::with_capacity(cfg.n);
    let mut records = Vec::with_capacity(cfg.n);
    let mut tokens: Vec<&str> = Vec::with_capacity(cfg.bio_length);
    for _ in 0..cfg.n {
        let gender = (rng.gen::<f64>() < cfg.gender_skew) as u32;
        let own = &by_majority[gender as usize];
        let other = &by_majority[1 - gender as usize];
        let pool = if rng.gen::<f64>() < cfg.profession_gender_bias {
            own
        } else {
            other
        };
        let pool = if pool.is_empty() { &all } else { pool };
        let prof = pick_weighted(&mut rng, pool, &weights);

        tokens.clear();
        for _ in 0..cfg.bio_length {
            let word = if rng.gen::<f64>() < cfg.gendered_word_rate {
                let list = if rng.gen::<f64>() < cfg.gendered_word_fidelity {
                    gender
                } else {
                    1 - gender
                };
                &gendered_words[list as usize][rng.gen_range(0..cfg.gendered_vocab_size)]
            } else if rng.gen::<f64>() < cfg.signal_word_rate {
                let source = if k > 1 && rng.gen::<f64>() < cfg.signal_noise {
                    rng.gen_range(0..k)
                } else {
                    prof
                };
                &signal_words[source][rng.gen_range(0..cfg.signal_words_per_profession)]
            } else {
                &filler[rng.gen_range(0..cfg.filler_vocab_size)]
            };
            tokens.push(word);
        }
        let text = tokens.join(" ");
        let gender_name = gender_map.name(gender).expect("binary").to_string();
        raw.push(RawRecord {
            bio: text.clone(),
            gender: gender_name,
            profession: profession_name(prof),
        });
        records.push(Record {
            text,
            gender_id: gender,
            profession_id: prof_id[prof],
        });
    }

    let mut majority_by_id = vec![0; k];
    let mut weights_by_id = vec![0.0; k];
    for p in 0..k {
        majority_by_id[prof_id[p] as usize] = majority[p];
        weights_by_id[prof_id[p] as usize] = weights[p];
    }
    let truth = GroundTruth {
        config: *cfg,
        gender_names: gender_map.names().to_vec(),
        profession_names: profession_map.names().to_vec(),
        majority_gender: majority_by_id,
        profession_weights: weights_by_id,
    };
    Ok(SynthCorpus {
        raw,
        records,
        gender_map,
        profession_map,
        truth,
    })
}

/// Write the corpus as `bio,gender,profession` CSV.
pub fn write_csv<W: std::io::Write>(w: W, raw: &[RawRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bio", "gender", "profession"])?;
    for r in raw {
        out.write_record([&r.bio, &r.gender, &r.profession])?;
    }
    out.flush()?;
    Ok(())
}
