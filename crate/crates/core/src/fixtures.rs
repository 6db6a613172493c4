//! Small reference models used across tests, benchmarks, and docs. Each has
//! hand-checkable spectral data, so they double as oracles.

use crate::model::Model;

/// Deterministic binary tree: one type, always two children.
/// rho = 2, extinction probability 0.
pub fn binary() -> Model {
    Model::from_json_str(
        r#"{"types":["a"],
            "offspring":{"a":[{"p":1.0,"children":[{"type":"a"},{"type":"a"}]}]}}"#,
    )
    .expect("binary fixture is valid")
}

/// Single type with leaves: no child with probability 1/4, two children with
/// probability 3/4. rho = 3/2, extinction probability 1/3.
pub fn leafy() -> Model {
    Model::from_json_str(
        r#"{"types":["a"],
            "offspring":{"a":[{"p":"0.25","children":[]},
                              {"p":"0.75","children":[{"type":"a"},{"type":"a"}]}]}}"#,
    )
    .expect("leafy fixture is valid")
}

/// Two types: an `a` always has one `a` and one `b`; a `b` has one `a` or
/// three `a`s with probability 1/2 each. rho = 2, right = (1/2, 1/2),
/// left = (2/3, 1/3), never extinct.
pub fn two_type() -> Model {
    Model::from_json_str(
        r#"{"types":["a","b"],
            "offspring":{
              "a":[{"p":1.0,"children":[{"type":"a"},{"type":"b"}]}],
              "b":[{"p":"0.5","children":[{"type":"a"}]},
                   {"p":"0.5","children":[{"type":"a"},{"type":"a"},{"type":"a"}]}]}}"#,
    )
    .expect("two_type fixture is valid")
}

/// Weighted single-type model: always two children with edge weights 2 and
/// 1/2. Weighted mean curve rho_bar(gamma) = 2^gamma + 2^(-gamma).
pub fn weighted_pair() -> Model {
    Model::from_json_str(
        r#"{"types":["a"],
            "offspring":{"a":[{"p":1.0,"children":[{"type":"a","w":2.0},
                                                   {"type":"a","w":0.5}]}]}}"#,
    )
    .expect("weighted_pair fixture is valid")
}

/// Two types with distinct extinction probabilities, for exercising the
/// conditioned-on-survival transform on a genuinely multi-type case.
pub fn two_type_leafy() -> Model {
    Model::from_json_str(
        r#"{"types":["a","b"],
            "offspring":{
              "a":[{"p":"0.2","children":[]},
                   {"p":"0.8","children":[{"type":"a"},{"type":"b"}]}],
              "b":[{"p":"0.4","children":[]},
                   {"p":"0.6","children":[{"type":"a"},{"type":"a"},{"type":"b"}]}]}}"#,
    )
    .expect("two_type_leafy fixture is valid")
}

/// Weighted single-type model with two distinct atoms, so the size-biased
/// root law is not degenerate: one child of weight 2, or two of weight 1/2
/// and one of weight 1.
pub fn weighted_mixed() -> Model {
    Model::from_json_str(
        r#"{"types":["a"],
            "offspring":{"a":[{"p":"0.5","children":[{"type":"a","w":2.0}]},
                              {"p":"0.5","children":[{"type":"a","w":0.5},
                                                     {"type":"a","w":0.5},
                                                     {"type":"a","w":1.0}]}]}}"#,
    )
    .expect("weighted_mixed fixture is valid")
}
