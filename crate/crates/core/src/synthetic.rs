//! Synthetic 24-participant study script.
//!
//! Participant-level targets (mean words per entry, questionnaire scores,
//! on-time nights) are fixed; the generator only fills in wording and which
//! nights carry which timing. Word totals per participant are exact, so
//! condition means of the word-count measure are exact too.

use chrono::NaiveTime;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Condition;
use crate::simulate::{
    NightTiming, ScriptedNight, ScriptedParticipant, ScriptedQuestionnaire, SimulationScript,
};

pub const BUNDLED_SEED: u64 = 2024;
const NIGHTS: u32 = 7;

struct Target {
    condition: Condition,
    mean_words: usize,
    sus: f64,
    scope: u8,
    flow: u8,
    depth_total: u32,
    on_time: usize,
    other: usize,
    missed: usize,
    skip: usize,
}

const fn t(
    condition: Condition,
    mean_words: usize,
    sus: f64,
    (scope, flow, depth_total): (u8, u8, u32),
    (on_time, other, missed, skip): (usize, usize, usize, usize),
) -> Target {
    Target {
        condition,
        mean_words,
        sus,
        scope,
        flow,
        depth_total,
        on_time,
        other,
        missed,
        skip,
    }
}

use Condition::{AudioTranscript as A, RobotConversational as R, TextForm as T};

#[rustfmt::skip]
const TARGETS: [Target; 24] = [
    t(R, 100, 87.5, (1, 6, 20), (6, 0, 0, 1)),
    t(R, 130, 92.5, (1, 5, 25), (6, 1, 0, 0)),
    t(R, 170, 97.5, (2, 3, 30), (6, 1, 0, 0)),
    t(R, 220, 47.5, (1, 7, 35), (6, 1, 0, 0)),
    t(R, 280, 40.0, (3, 4, 40), (6, 1, 0, 0)),
    t(R, 350, 42.5, (1, 2, 32), (6, 1, 0, 0)),
    t(R, 440, 50.0, (4, 6, 38), (6, 1, 0, 0)),
    t(R, 598, 52.5, (1, 5, 32), (6, 1, 0, 0)),
    t(A, 180, 70.0, (1, 4, 28), (3, 3, 1, 0)),
    t(A, 220, 75.0, (2, 5, 30), (3, 3, 1, 0)),
    t(A, 250, 80.0, (3, 6, 33), (6, 1, 0, 0)),
    t(A, 290, 85.0, (5, 7, 35), (6, 1, 0, 0)),
    t(A, 330, 87.5, (4, 3, 36), (6, 1, 0, 0)),
    t(A, 380, 90.0, (1, 6, 34), (5, 2, 0, 0)),
    t(A, 450, 92.5, (6, 7, 34), (5, 2, 0, 0)),
    t(A, 1052, 95.0, (1, 6, 34), (5, 2, 0, 0)),
    t(T, 85, 80.0, (2, 7, 30), (3, 2, 2, 0)),
    t(T, 100, 85.0, (3, 6, 32), (5, 1, 1, 0)),
    t(T, 115, 90.0, (4, 7, 33), (4, 3, 0, 0)),
    t(T, 125, 92.5, (5, 6, 34), (4, 3, 0, 0)),
    t(T, 135, 95.0, (3, 7, 35), (4, 3, 0, 0)),
    t(T, 145, 95.0, (1, 6, 32), (4, 3, 0, 0)),
    t(T, 160, 97.5, (6, 7, 32), (4, 3, 0, 0)),
    t(T, 175, 97.5, (3, 6, 32), (3, 4, 0, 0)),
];

/// Share of each answer in an entry's word budget.
const ANSWER_SHARES: [f64; 6] = [0.30, 0.16, 0.16, 0.14, 0.12, 0.12];
const MIN_ANSWER_WORDS: usize = 6;

const ROUTINE: &[&str] = &[
    "We started with a bath and then put on pajamas.",
    "After that we brushed teeth together at the sink.",
    "She picked two stories and we read a book in bed.",
    "We sang a song and said prayers before lights out.",
    "He had a bedtime snack and a glass of water first.",
    "Then a quick potty trip and we tucked him in.",
    "We talked about the day while I brushed hair.",
    "We cleaned up toys in the bedroom before the story.",
    "I turned on the nightlight and the white noise machine.",
    "There were lots of cuddles and a long hug goodnight.",
    "She took her vitamins and washed her face.",
    "It went smoothly overall and we finished on time.",
];
const CHALLENGES: &[&str] = &[
    "He did not want to stop playing with his legos.",
    "There was some stalling over which pajamas to wear.",
    "She asked for one more story three times.",
    "Getting out of the bath took a while tonight.",
    "No real challenges, it was an easy night.",
    "He was wound up after soccer practice and dinner ran late.",
    "Screen time ended with a few tears about the tablet.",
    "Brushing teeth turned into a small standoff.",
];
const FEELINGS: &[&str] = &[
    "I felt good because everything went to plan.",
    "Honestly I was tired after a long work day.",
    "I felt calm and a bit proud of how it went.",
    "I was frustrated during the stalling but relieved at the end.",
    "A little stressed because we were rushed after dinner.",
    "I felt grateful for the quiet time together.",
    "I was exhausted but happy we got through it.",
];
const DIFFERENT: &[&str] = &[
    "We went to the park after dinner which we usually skip.",
    "Grandma called during the routine and we chatted.",
    "Nothing was very different from a usual night.",
    "We watched a short movie before starting bedtime.",
    "He had homework so everything started later.",
    "We did an art project with painting before the bath.",
];
const STOOD_OUT: &[&str] = &[
    "She told me she loved me more than the moon.",
    "He asked a lot of questions about where the stars go.",
    "She said she was not tired at all and then fell asleep fast.",
    "He made up his own song about our dog.",
    "She wanted to read the story to me instead.",
    "Nothing in particular stood out tonight.",
];
const EXTRA: &[&str] = &[
    "Overall a pretty typical evening for us.",
    "I think the new order of steps is working.",
    "Tomorrow we will try to start a little earlier.",
    "Nothing else to add really.",
    "It was nice to slow down at the end of the day.",
    "We are still adjusting to the new school schedule.",
];
const POOLS: [&[&str]; 6] = [ROUTINE, CHALLENGES, FEELINGS, DIFFERENT, STOOD_OUT, EXTRA];

/// Exactly `words` words drawn from `pool`.
fn answer_text(pool: &[&str], words: usize, rng: &mut ChaCha8Rng) -> String {
    let mut order: Vec<&str> = pool.to_vec();
    order.shuffle(rng);
    let mut out: Vec<&str> = Vec::with_capacity(words);
    let mut i = 0;
    while out.len() < words {
        if i == order.len() {
            order.shuffle(rng);
            i = 0;
        }
        out.extend(order[i].split_whitespace());
        i += 1;
    }
    out.truncate(words);
    out.join(" ")
}

/// Split `total` into parts proportional to `weights`, largest remainders first.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - parts.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..weights.len()).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in by_frac.iter().cycle() {
        if rest == 0 {
            break;
        }
        parts[i] += 1;
        rest -= 1;
    }
    parts
}

/// Per-answer word budgets for one entry, each at least [`MIN_ANSWER_WORDS`].
fn answer_budgets(words: usize) -> Vec<usize> {
    let mut parts = apportion(words, &ANSWER_SHARES);
    for i in 1..parts.len() {
        if parts[i] < MIN_ANSWER_WORDS {
            let need = MIN_ANSWER_WORDS - parts[i];
            parts[i] += need;
            parts[0] -= need;
        }
    }
    parts
}

/// Per-night word totals, declining over the week, summing to `mean · n`.
fn night_budgets(mean: usize, n: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                1.0
            } else {
                1.3 - 0.6 * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    apportion(mean * n, &weights)
}

fn sus_items(score: f64) -> Vec<u8> {
    let raw = (score / 2.5).round() as usize;
    (0..10)
        .map(|i| {
            let c = (raw / 10 + usize::from(i < raw % 10)) as u8;
            if i % 2 == 0 {
                c + 1
            } else {
                5 - c
            }
        })
        .collect()
}

fn depth_items(total: u32) -> Vec<u8> {
    (0..8)
        .map(|i| (total / 8 + u32::from(i < total % 8)) as u8)
        .collect()
}

fn use_items(sus: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let level = 1.0 + sus / 100.0 * 6.0;
    (0..30)
        .map(|_| {
            (level + rng.random_range(-1.0..1.0))
                .round()
                .clamp(1.0, 7.0) as u8
        })
        .collect()
}

fn timings(target: &Target, rng: &mut ChaCha8Rng) -> Vec<NightTiming> {
    // Skips go last, after the participant has settled in.
    let active = NIGHTS as usize - target.skip;
    let mut late_ones: Vec<NightTiming> = (0..target.other)
        .map(|_| {
            if rng.random_bool(0.5) {
                NightTiming::AfterReminder
            } else {
                NightTiming::Late
            }
        })
        .collect();
    let mut plan = vec![NightTiming::OnTime; target.on_time];
    plan.append(&mut late_ones);
    plan.extend(std::iter::repeat_n(NightTiming::Missed, target.missed));
    debug_assert_eq!(plan.len(), active);
    plan.shuffle(rng);
    plan.extend(std::iter::repeat_n(NightTiming::Skip, target.skip));
    plan
}

fn participant(index: usize, target: &Target, rng: &mut ChaCha8Rng) -> ScriptedParticipant {
    let prefix = match target.condition {
        Condition::RobotConversational => "R",
        Condition::AudioTranscript => "A",
        Condition::TextForm => "T",
    };
    let participant_id = format!("{prefix}{:02}", index % 8 + 1);
    let plan = timings(target, rng);
    let submitted = plan
        .iter()
        .filter(|t| {
            matches!(
                t,
                NightTiming::OnTime | NightTiming::AfterReminder | NightTiming::Late
            )
        })
        .count();
    let mut budgets = night_budgets(target.mean_words, submitted).into_iter();
    let nights = plan
        .into_iter()
        .enumerate()
        .map(|(i, timing)| {
            let responses = match timing {
                NightTiming::Skip | NightTiming::Missed => vec![],
                _ => answer_budgets(budgets.next().unwrap())
                    .into_iter()
                    .zip(POOLS)
                    .map(|(words, pool)| vec![answer_text(pool, words, rng)])
                    .collect(),
            };
            ScriptedNight {
                night: i as u32 + 1,
                timing,
                responses,
            }
        })
        .collect();
    let check_time = (index % 3 == 2).then(|| NaiveTime::from_hms_opt(21, 0, 0).unwrap());
    ScriptedParticipant {
        participant_id,
        condition: target.condition,
        check_time,
        nights,
        questionnaire: Some(ScriptedQuestionnaire {
            use_items: use_items(target.sus, rng),
            sus_items: sus_items(target.sus),
            breadth_items: vec![target.scope, target.flow, rng.random_range(2..=6)],
            depth_items: depth_items(target.depth_total),
        }),
    }
}

/// The 24-participant, three-condition study script.
pub fn bundled_script(seed: u64) -> SimulationScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SimulationScript {
        study: None,
        seed,
        mock: Default::default(),
        participants: TARGETS
            .iter()
            .enumerate()
            .map(|(i, t)| participant(i, t, &mut rng))
            .collect(),
    }
}
