#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use updatebench::triplet::{parse_time, MethodPairTriplet};

/// A scratch git repository with deterministic author and commit dates.
pub struct Repo {
    pub path: PathBuf,
}

impl Repo {
    pub fn init(parent: &Path, name: &str) -> Self {
        let path = parent.join(name);
        std::fs::create_dir_all(&path).unwrap();
        let repo = Self { path };
        repo.git(&["init", "--quiet", "--initial-branch=main"], "2015-01-01T00:00:00Z");
        repo
    }

    pub fn git(&self, args: &[&str], date: &str) {
        let out = Command::new("git")
            .args(["-c", "user.name=Dev", "-c", "user.email=dev@example.com", "-c", "commit.gpgsign=false"])
            .args(args)
            .current_dir(&self.path)
            .env("GIT_AUTHOR_DATE", date)
            .env("GIT_COMMITTER_DATE", date)
            .output()
            .unwrap();
        assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    pub fn write(&self, file: &str, content: &str) {
        let p = self.path.join(file);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, content).unwrap();
    }

    pub fn commit(&self, message: &str, date: &str) {
        self.git(&["add", "-A"], date);
        self.git(&["commit", "--quiet", "--allow-empty", "-m", message], date);
    }
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn triplet(id: usize, prior: &str, updated: &str, time: &str) -> MethodPairTriplet {
    MethodPairTriplet {
        example_id: format!("ex{id}"),
        repo_id: format!("repo{}", id % 3),
        commit_hash: format!("{id:040x}"),
        commit_time: parse_time(time).unwrap(),
        message: "Fix crash".into(),
        file_path: "A.java".into(),
        method: "f/0".into(),
        prior: toks(prior),
        updated: toks(updated),
    }
}

/// Random triplets dated uniformly over 2008-2022 with distinct contents.
pub fn random_triplets(rng: &mut ChaCha8Rng, n: usize) -> Vec<MethodPairTriplet> {
    (0..n)
        .map(|i| {
            let year = rng.gen_range(2008..=2022);
            let month = rng.gen_range(1..=12);
            let day = rng.gen_range(1..=28);
            let time = format!("{year}-{month:02}-{day:02}T{:02}:00:00Z", rng.gen_range(0..24));
            triplet(i, &format!("int f ( ) {{ return {i} ; }}"), &format!("int f ( ) {{ return {} ; }}", i + 1), &time)
        })
        .collect()
}
