use serde::{Deserialize, Serialize};

use super::Route;

/// Engine switches. The defaults are the full system: every route, the
/// router with scene context, graph-constrained planning, fallback and
/// verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub enable_rewrite: bool,
    pub enable_spatial: bool,
    pub enable_local: bool,
    /// Show the profile's scene context to the router.
    pub enable_context: bool,
    pub enable_router: bool,
    /// Forces this route and skips the router call.
    pub oracle_route: Option<Route>,
    /// Batch runs take each case's labelled route as the oracle.
    pub use_oracle_labels: bool,
    pub enable_mdp: bool,
    pub enable_fallback: bool,
    pub enable_ifinish: bool,
    /// Maximum executed steps per session.
    pub budget: u32,
    /// Best-of-two baseline instead of the agentic loop.
    pub bo2: bool,
    /// The session fails once this many verdicts say "not finished".
    pub verify_retry_limit: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            enable_rewrite: true,
            enable_spatial: true,
            enable_local: true,
            enable_context: true,
            enable_router: true,
            oracle_route: None,
            use_oracle_labels: false,
            enable_mdp: true,
            enable_fallback: true,
            enable_ifinish: true,
            budget: 12,
            bo2: false,
            verify_retry_limit: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid engine config: {0}")]
pub struct ConfigError(pub String);

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError("budget must be at least 1".into()));
        }
        if self.verify_retry_limit == 0 {
            return Err(ConfigError("verify_retry_limit must be at least 1".into()));
        }
        Ok(())
    }

    /// No routing happens at all: the session is one direct edit.
    pub fn is_direct_only(&self) -> bool {
        !self.bo2 && self.oracle_route.is_none() && !self.use_oracle_labels && !self.enable_router
    }

    /// Routes the router may choose from, in routing precedence order.
    pub fn enabled_routes(&self) -> Vec<Route> {
        let mut routes = Vec::new();
        if self.enable_local {
            routes.push(Route::CLocal);
        }
        if self.enable_spatial {
            routes.push(Route::BSpatial);
        }
        if self.enable_rewrite {
            routes.push(Route::ARewrite);
        }
        routes.push(Route::ADirect);
        routes
    }

    fn agentic_off() -> Self {
        Self { enable_router: false, enable_mdp: false, enable_fallback: false, enable_ifinish: false, ..Self::default() }
    }

    /// Reformulation ablation presets `a`–`e`.
    ///
    /// `a` is plain direct editing; `b`–`e` run the full agentic loop while
    /// adding rewrite, spatial, local and scene context in turn.
    pub fn reformulation_preset(label: &str) -> Option<Self> {
        let full = Self::default();
        let reform = |rewrite, spatial, local, context| Self {
            enable_rewrite: rewrite,
            enable_spatial: spatial,
            enable_local: local,
            enable_context: context,
            ..full.clone()
        };
        Some(match label {
            "a" => Self { enable_rewrite: false, enable_spatial: false, enable_local: false, enable_context: false, ..Self::agentic_off() },
            "b" => reform(true, false, false, false),
            "c" => reform(true, true, false, false),
            "d" => reform(true, true, true, false),
            "e" => reform(true, true, true, true),
            _ => return None,
        })
    }

    /// Routing and agentic-component ablation presets `a`–`g`.
    pub fn component_preset(label: &str) -> Option<Self> {
        let base = Self::agentic_off();
        Some(match label {
            "a" => base,
            "b" => Self { enable_router: true, ..base },
            "c" => Self { use_oracle_labels: true, ..base },
            "d" => Self { enable_router: true, enable_mdp: true, ..base },
            "e" => Self { enable_router: true, enable_mdp: true, enable_fallback: true, ..base },
            "f" => Self { enable_router: true, enable_mdp: true, enable_fallback: true, enable_ifinish: true, ..base },
            "g" => Self { use_oracle_labels: true, enable_mdp: true, enable_fallback: true, enable_ifinish: true, ..base },
            _ => return None,
        })
    }

    pub const REFORMULATION_PRESETS: [&'static str; 5] = ["a", "b", "c", "d", "e"];
    pub const COMPONENT_PRESETS: [&'static str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

    /// Compact flag summary for report tables.
    pub fn flag_summary(&self) -> String {
        let mut parts = Vec::new();
        let mut flag = |on: bool, name: &str| {
            if on {
                parts.push(name.to_string());
            }
        };
        flag(self.enable_rewrite, "rewrite");
        flag(self.enable_spatial, "spatial");
        flag(self.enable_local, "local");
        flag(self.enable_context, "context");
        flag(self.enable_router, "router");
        flag(self.use_oracle_labels, "oracle");
        flag(self.enable_mdp, "mdp");
        flag(self.enable_fallback, "fallback");
        flag(self.enable_ifinish, "ifinish");
        flag(self.bo2, "bo2");
        if let Some(r) = self.oracle_route {
            parts.push(format!("route={}", r.code()));
        }
        if parts.is_empty() {
            "direct".into()
        } else {
            parts.join("+")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_the_ablation_grids() {
        let a3 = EngineConfig::reformulation_preset("a").unwrap();
        let a4 = EngineConfig::component_preset("a").unwrap();
        assert!(a3.is_direct_only() && a4.is_direct_only());
        assert_eq!(EngineConfig::reformulation_preset("e").unwrap(), EngineConfig::component_preset("f").unwrap());
        assert_eq!(EngineConfig::component_preset("f").unwrap(), EngineConfig::default());
        let g = EngineConfig::component_preset("g").unwrap();
        assert!(g.use_oracle_labels && !g.enable_router && g.enable_ifinish);
        assert!(!EngineConfig::component_preset("c").unwrap().is_direct_only());
        assert!(EngineConfig::component_preset("h").is_none());
        for l in EngineConfig::REFORMULATION_PRESETS {
            EngineConfig::reformulation_preset(l).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn enabled_routes_respect_flags() {
        let c = EngineConfig { enable_local: false, ..EngineConfig::default() };
        assert_eq!(c.enabled_routes(), vec![Route::BSpatial, Route::ARewrite, Route::ADirect]);
        let c = EngineConfig::reformulation_preset("a").unwrap();
        assert_eq!(c.enabled_routes(), vec![Route::ADirect]);
    }

    #[test]
    fn config_parses_from_toml() {
        let c: EngineConfig = toml::from_str("budget = 5\noracle_route = \"B_spatial\"\nenable_ifinish = false").unwrap();
        assert_eq!(c.budget, 5);
        assert_eq!(c.oracle_route, Some(Route::BSpatial));
        assert!(!c.enable_ifinish && c.enable_mdp);
        assert!(toml::from_str::<EngineConfig>("budgett = 5").is_err());
        assert!(EngineConfig { budget: 0, ..EngineConfig::default() }.validate().is_err());
    }
}
