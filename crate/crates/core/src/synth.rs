//! Deterministic synthetic corpora for the end-to-end experiments.
//!
//! Every pair is one short Java method rewritten by a fixed rule. Identifiers
//! come from small pools so a model trained on a few hundred pairs has seen
//! all of them; only the combination is new at test time.

use std::collections::HashSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::triplet::MethodPairTriplet;

const METHODS: &[&str] = &[
    "load", "refresh", "bind", "render", "update", "show", "hide", "reset", "prepare", "attach", "detach", "notify",
    "apply", "store", "fetch", "clear", "open", "close", "start", "finish", "select", "toggle", "submit", "cancel",
];
const VARS: &[&str] = &[
    "view", "icon", "list", "items", "name", "title", "label", "count", "user", "item", "image", "header", "footer",
    "button", "dialog", "adapter", "cursor", "entry", "record", "value", "result", "state", "token", "path",
];
const FIELDS: &[&str] = &["sDefaultImage", "sPlaceholder", "mIcon", "mBackground", "sEmptyImage", "mBadge"];
const DRAWABLES: &[&str] = &[
    "ic_contact_picture", "ic_default_contact", "ic_launcher", "ic_empty", "ic_error", "ic_avatar", "ic_star",
    "ic_share",
];
const HELPERS: &[&str] = &["MediaUtils", "ActivityLauncher", "PickerUtils", "GalleryHelper"];
const STRINGS: &[&str] = &["\"done\"", "\"start\"", "\"error\"", "\"ready\"", "\"saved\"", "\"empty\"", "\"retry\""];
const DELAYS: &[&str] = &["100", "250", "500", "1000", "2000"];

/// One synthetic rewrite: `(prior, updated)` as space-separated tokens.
pub type Rule = fn(&mut ChaCha8Rng) -> (String, String);

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).copied().unwrap_or_default()
}

/// An unchanged leading statement, or nothing.
fn filler(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..3) {
        0 => String::new(),
        1 => format!("{} . {} ( ) ; ", pick(rng, VARS), pick(rng, METHODS)),
        _ => format!("int {} = {} . {} ( ) ; ", pick(rng, VARS), pick(rng, VARS), pick(rng, METHODS)),
    }
}

fn body(rng: &mut ChaCha8Rng, header: &str, before: &str, after: &str) -> (String, String) {
    let f = filler(rng);
    (format!("{header} {{ {f}{before} }}"), format!("{header} {{ {f}{after} }}"))
}

/// Deprecated `getDrawable` replaced by the compat helper.
fn api_replacement(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, c, field, d) = (pick(rng, METHODS), pick(rng, VARS), pick(rng, FIELDS), pick(rng, DRAWABLES));
    let head = format!("Drawable {m} ( Context {c} ) {{ if ( {field} == null ) {field} =");
    (
        format!("{head} {c} . getResources ( ) . getDrawable ( R . drawable . {d} ) ; return {field} ; }}"),
        format!(
            "{head} ResourcesCompat . getDrawable ( {c} . getResources ( ) , R . drawable . {d} , {c} . getTheme ( ) ) ; return {field} ; }}"
        ),
    )
}

/// A hard-coded `false` argument becomes a new parameter.
fn parameter_add(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, h) = (pick(rng, METHODS), pick(rng, HELPERS));
    (
        format!("private void {m} ( ) {{ {h} . {m} ( this , false ) ; }}"),
        format!("private void {m} ( boolean multiSelect ) {{ {h} . {m} ( this , multiSelect ) ; }}"),
    )
}

fn set_background(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, v, d) = (pick(rng, METHODS), pick(rng, VARS), pick(rng, VARS));
    let header = format!("void {m} ( )");
    body(
        rng,
        &header,
        &format!("{v} . setBackgroundDrawable ( {d} ) ;"),
        &format!("{v} . setBackground ( {d} ) ;"),
    )
}

fn null_guard(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, v) = (pick(rng, METHODS), pick(rng, VARS));
    let header = format!("void {m} ( )");
    body(
        rng,
        &header,
        &format!("{v} . recycle ( ) ;"),
        &format!("if ( {v} != null ) {v} . recycle ( ) ;"),
    )
}

fn boxing(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, v) = (pick(rng, METHODS), pick(rng, VARS));
    let header = format!("Integer {m} ( int {v} )");
    body(
        rng,
        &header,
        &format!("return new Integer ( {v} ) ;"),
        &format!("return Integer . valueOf ( {v} ) ;"),
    )
}

fn logging(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, s) = (pick(rng, METHODS), pick(rng, STRINGS));
    let header = format!("void {m} ( )");
    body(
        rng,
        &header,
        &format!("System . out . println ( {s} ) ;"),
        &format!("Log . d ( TAG , {s} ) ;"),
    )
}

fn is_empty(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, v) = (pick(rng, METHODS), pick(rng, VARS));
    let header = format!("boolean {m} ( )");
    body(
        rng,
        &header,
        &format!("return {v} . size ( ) == 0 ;"),
        &format!("return {v} . isEmpty ( ) ;"),
    )
}

fn string_equals(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, v, s) = (pick(rng, METHODS), pick(rng, VARS), pick(rng, STRINGS));
    let header = format!("boolean {m} ( String {v} )");
    body(
        rng,
        &header,
        &format!("return {v} == {s} ;"),
        &format!("return {s} . equals ( {v} ) ;"),
    )
}

fn sleep(rng: &mut ChaCha8Rng) -> (String, String) {
    let (m, d) = (pick(rng, METHODS), pick(rng, DELAYS));
    let f = filler(rng);
    (
        format!("void {m} ( ) throws InterruptedException {{ {f}Thread . sleep ( {d} ) ; }}"),
        format!("void {m} ( ) {{ {f}SystemClock . sleep ( {d} ) ; }}"),
    )
}

fn require_activity(rng: &mut ChaCha8Rng) -> (String, String) {
    let m = pick(rng, METHODS);
    let n = pick(rng, METHODS);
    let header = format!("void {m} ( )");
    body(
        rng,
        &header,
        &format!("getActivity ( ) . {n} ( ) ;"),
        &format!("requireActivity ( ) . {n} ( ) ;"),
    )
}

/// The ten rewrite rules, with the commit message used for each.
pub const RULES: [(Rule, &str); 10] = [
    (api_replacement, "Replace deprecated getDrawable with ResourcesCompat"),
    (parameter_add, "Enable choosing multiple items from the picker"),
    (set_background, "Refactor background handling to the newer API"),
    (null_guard, "Fix crash when the bitmap is null"),
    (boxing, "Improve performance by avoiding boxing"),
    (logging, "Use Log instead of System.out"),
    (is_empty, "Clean up collection size checks"),
    (string_equals, "Fix string comparison bug"),
    (sleep, "Refactor sleep calls to SystemClock"),
    (require_activity, "Fix crash when fragment is detached"),
];

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn commit_time(rng: &mut ChaCha8Rng, first_year: i32, last_year: i32) -> DateTime<Utc> {
    let start = Utc.with_ymd_and_hms(first_year, 1, 1, 0, 0, 0).unwrap();
    let end = Utc.with_ymd_and_hms(last_year + 1, 1, 1, 0, 0, 0).unwrap();
    start + Duration::seconds(rng.gen_range(0..(end - start).num_seconds()))
}

fn triplet(rng: &mut ChaCha8Rng, index: usize, prior: &str, updated: &str, message: &str, years: (i32, i32)) -> MethodPairTriplet {
    let prior = split(prior);
    let open = prior.iter().position(|t| t == "(").unwrap_or(0);
    let close = prior.iter().position(|t| t == ")").unwrap_or(open);
    let params = prior[open..close].iter().filter(|t| *t == ",").count() + usize::from(close > open + 1);
    let name = open.checked_sub(1).map(|p| prior[p].clone()).unwrap_or_default();
    let mut t = MethodPairTriplet {
        example_id: String::new(),
        repo_id: format!("synth/app{}", index % 7),
        commit_hash: format!("{:016x}{:024x}", rng.gen::<u64>(), index),
        commit_time: commit_time(rng, years.0, years.1),
        message: message.to_string(),
        file_path: format!("src/main/java/synth/C{index}.java"),
        method: format!("{name}/{params}"),
        prior,
        updated: split(updated),
    };
    t.example_id = t.derive_example_id();
    t
}

/// `n` distinct pairs, each drawn from a uniformly chosen rule in `rules`
/// and dated uniformly within `years` (inclusive).
pub fn generate(n: usize, rules: &[usize], years: (i32, i32), seed: u64) -> Vec<MethodPairTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < n * 100 {
        attempts += 1;
        let r = rules[rng.gen_range(0..rules.len())];
        let (rule, message) = RULES[r];
        let (prior, updated) = rule(&mut rng);
        if seen.insert(prior.clone()) {
            out.push(triplet(&mut rng, out.len(), &prior, &updated, message, years));
        }
    }
    out
}

/// Pairs for the seen-rule experiment: all ten rules, dated 2016-2021.
pub fn rule_corpus(n: usize, seed: u64) -> Vec<MethodPairTriplet> {
    generate(n, &(0..RULES.len()).collect::<Vec<_>>(), (2016, 2021), seed)
}

/// Half the pairs predate `boundary_year` and use rules 0-4; the rest use
/// rules 5-9, so models that only see the past never meet the new rules.
pub fn drift_corpus(n: usize, boundary_year: i32, seed: u64) -> Vec<MethodPairTriplet> {
    let mut old = generate(n / 2, &[0, 1, 2, 3, 4], (boundary_year - 4, boundary_year - 1), seed);
    let new = generate(n - n / 2, &[5, 6, 7, 8, 9], (boundary_year, boundary_year + 1), seed ^ 0x5eed);
    for (i, mut t) in new.into_iter().enumerate() {
        t.file_path = format!("src/main/java/synth/D{i}.java");
        t.example_id = t.derive_example_id();
        old.push(t);
    }
    old
}

/// Probability of the first of the two edit variants in [`size_corpus`].
pub const MAJOR_VARIANT: f64 = 0.7;

/// Methods of `k` `use ( v ) ;` statements, each followed in the update by
/// `v = null ;` (probability 0.7) or `v = this ;`. Every edit inserts four
/// tokens, so `k` of 1, 2 and 7 land in the 0-5, 5-10 and 25+ update-size
/// buckets. More edits mean more equally plausible outcomes.
pub fn size_corpus(n: usize, edit_counts: &[usize], seed: u64) -> Vec<MethodPairTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < n * 100 {
        attempts += 1;
        let k = edit_counts[out.len() % edit_counts.len()];
        let m = pick(&mut rng, METHODS);
        let vars: Vec<&str> = VARS.choose_multiple(&mut rng, k).copied().collect();
        let mut prior = format!("void {m} ( ) {{");
        let mut updated = prior.clone();
        for v in &vars {
            let stmt = format!(" use ( {v} ) ;");
            prior.push_str(&stmt);
            updated.push_str(&stmt);
            let value = if rng.gen_bool(MAJOR_VARIANT) { "null" } else { "this" };
            updated.push_str(&format!(" {v} = {value} ;"));
        }
        prior.push_str(" }");
        updated.push_str(" }");
        if seen.insert((prior.clone(), updated.clone())) {
            let message = format!("Release {k} references after use");
            out.push(triplet(&mut rng, out.len(), &prior, &updated, &message, (2016, 2021)));
        }
    }
    out
}
