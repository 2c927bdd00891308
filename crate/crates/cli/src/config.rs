//! Config file: backend profiles plus run defaults that flags override.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use factline::backends::profile::MockEmbedding;
use factline::backends::{BackendKind, BackendProfile, Provider};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub k: Option<usize>,
    pub ratio: Option<f64>,
    pub seeds: Option<usize>,
    pub max_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    #[serde(default)]
    pub run: RunDefaults,
    #[serde(default)]
    pub profiles: BTreeMap<String, BackendProfile>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config =
            toml::from_str(&body).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (name, profile) in &mut config.profiles {
            profile.name = name.clone();
            profile.rebase(base);
            profile.validate()?;
        }
        Ok(config)
    }

    /// A named profile from the config, or one of the built-in mocks.
    pub fn profile(&self, name: &str) -> Result<BackendProfile> {
        if let Some(p) = self.profiles.get(name) {
            return Ok(p.clone());
        }
        if let Some(p) = builtin(name) {
            return Ok(p);
        }
        let known: Vec<&str> = self
            .profiles
            .keys()
            .map(String::as_str)
            .chain(BUILTINS.iter().copied())
            .collect();
        bail!(
            "unknown backend profile `{name}` (known: {})",
            known.join(", ")
        )
    }

    /// Resolve a comma-separated profile list and sort the profiles by kind.
    pub fn roles(&self, names: &[String]) -> Result<Roles> {
        let mut roles = Roles::default();
        for name in names {
            let p = self.profile(name)?;
            let slot = match p.kind {
                BackendKind::Chat => &mut roles.chat,
                BackendKind::Embedding => &mut roles.embedding,
                BackendKind::Nli => &mut roles.nli,
            };
            if let Some(prev) = slot {
                bail!(
                    "profiles `{}` and `{}` are both {:?} backends",
                    prev.name,
                    p.name,
                    p.kind
                );
            }
            *slot = Some(p);
        }
        Ok(roles)
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Roles {
    pub chat: Option<BackendProfile>,
    pub embedding: Option<BackendProfile>,
    pub nli: Option<BackendProfile>,
}

const BUILTINS: [&str; 3] = ["mock-embed", "mock-exact", "mock-nli"];

fn builtin(name: &str) -> Option<BackendProfile> {
    Some(match name {
        "mock-embed" => BackendProfile::new(name, BackendKind::Embedding, Provider::Mock),
        "mock-exact" => {
            let mut p = BackendProfile::new(name, BackendKind::Embedding, Provider::Mock);
            p.embedding = MockEmbedding::ExactMatch;
            p
        }
        "mock-nli" => BackendProfile::new(name, BackendKind::Nli, Provider::Mock),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_profiles_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("factline.toml");
        std::fs::write(
            &path,
            r#"
seed = 11

[run]
k = 10
ratio = 0.75

[profiles.gen]
kind = "chat"
provider = "mock"
script = "gen.jsonl"

[profiles.nli]
kind = "nli"
provider = "mock"
contradictions = [["Brazil", "Peru"]]
"#,
        )
        .unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.seed, Some(11));
        assert_eq!(c.run.k, Some(10));
        let gen = c.profile("gen").unwrap();
        assert_eq!(gen.script.unwrap(), dir.path().join("gen.jsonl"));
        assert_eq!(
            c.profile("nli").unwrap().contradictions,
            [("Brazil".to_string(), "Peru".to_string())]
        );
        assert!(c.profile("mock-embed").is_ok());
        assert!(c.profile("nope").is_err());

        let roles = c.roles(&["nli".into(), "mock-embed".into()]).unwrap();
        assert!(roles.chat.is_none());
        assert_eq!(roles.nli.unwrap().name, "nli");
        assert!(c.roles(&["nli".into(), "mock-nli".into()]).is_err());
    }

    #[test]
    fn rejects_keys_in_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[profiles.x]\nkind = \"chat\"\nendpoint = \"http://h\"\napi_key = \"sk-1\"\n",
        )
        .unwrap();
        assert!(Config::load(&path).is_err());
    }
}
