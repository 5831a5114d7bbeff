use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{distance, Rotation};

use super::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    NearestTo,
    FarthestFrom,
    ClosestToCenter,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
        Relation::NearestTo,
        Relation::FarthestFrom,
        Relation::ClosestToCenter,
    ];

    pub const VIEW_DEPENDENT: [Relation; 4] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
    ];

    pub const VIEW_INDEPENDENT: [Relation; 3] = [
        Relation::NearestTo,
        Relation::FarthestFrom,
        Relation::ClosestToCenter,
    ];

    pub fn is_view_dependent(self) -> bool {
        Self::VIEW_DEPENDENT.contains(&self)
    }

    pub fn needs_anchor(self) -> bool {
        self != Relation::ClosestToCenter
    }

    /// Phrase between `that is` and the anchor.
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
            Relation::InFrontOf => &["in", "front", "of"],
            Relation::Behind => &["behind"],
            Relation::NearestTo => &["nearest", "to"],
            Relation::FarthestFrom => &["farthest", "from"],
            Relation::ClosestToCenter => &["closest", "to", "the", "center", "of", "the", "room"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
            Relation::InFrontOf => "in-front-of",
            Relation::Behind => "behind",
            Relation::NearestTo => "nearest-to",
            Relation::FarthestFrom => "farthest-from",
            Relation::ClosestToCenter => "closest-to-center",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationQuery {
    pub relation: Relation,
    pub anchor: Option<usize>,
    /// Restricts candidates to one category; `None` considers every object.
    pub category: Option<usize>,
    /// Viewing direction of the speaker, in radians.
    pub speaker_angle: f64,
    /// Minimum score gap between the best and second-best candidate (meters).
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Unique(usize),
    Ambiguous,
}

/// Resolves a relation to the object that satisfies it.
///
/// Candidates are the non-anchor objects of the queried category. Each gets a
/// score: for directional relations the signed offset from the anchor along
/// the relation's axis in the speaker frame (speaker looks along `+y`, so
/// left is `-x` and in front is `-y`); for the rest the negated or plain
/// Euclidean distance. The best candidate wins when it leads the runner-up by
/// at least `margin`; a directional winner must also lie at least `margin`
/// on the stated side of the anchor.
pub fn relation_oracle(scene: &Scene, query: &RelationQuery) -> Result<Resolution> {
    let rel = query.relation;
    let anchor = match (rel.needs_anchor(), query.anchor) {
        (true, None) => {
            return Err(Error::Argument(alloc::format!("relation {} needs an anchor", rel.as_str())))
        }
        (true, Some(a)) if a >= scene.len() => return Err(Error::Index { index: a, len: scene.len() }),
        (true, Some(a)) => Some(a),
        (false, _) => None,
    };
    let rot = Rotation::about_z(query.speaker_angle);
    let anchor_view = anchor.map(|a| rot.apply(scene.objects[a].center));
    let anchor_world = anchor.map(|a| scene.objects[a].center);

    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        if Some(i) == anchor || query.category.is_some_and(|c| c != obj.category) {
            continue;
        }
        let score = match rel {
            Relation::LeftOf | Relation::RightOf | Relation::InFrontOf | Relation::Behind => {
                let p = rot.apply(obj.center);
                let a = anchor_view.expect("directional relations are anchored");
                match rel {
                    Relation::LeftOf => a[0] - p[0],
                    Relation::RightOf => p[0] - a[0],
                    Relation::InFrontOf => a[1] - p[1],
                    _ => p[1] - a[1],
                }
            }
            Relation::NearestTo => -distance(obj.center, anchor_world.expect("anchored")),
            Relation::FarthestFrom => distance(obj.center, anchor_world.expect("anchored")),
            Relation::ClosestToCenter => -distance(obj.center, [0.0, 0.0, obj.center[2]]),
        };
        scored.push((score, i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let Some(&(best, winner)) = scored.first() else {
        return Ok(Resolution::Ambiguous);
    };
    if rel.is_view_dependent() && best < query.margin {
        return Ok(Resolution::Ambiguous);
    }
    if let Some(&(second, _)) = scored.get(1) {
        if best - second < query.margin {
            return Ok(Resolution::Ambiguous);
        }
    }
    Ok(Resolution::Unique(winner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::ObjectInstance;
    use alloc::vec;
    use core::f64::consts::PI;

    fn obj(category: usize, x: f64, y: f64) -> ObjectInstance {
        ObjectInstance {
            category,
            center: [x, y, 0.25],
            extent: [0.5, 0.5, 0.5],
            color: [0.0; 3],
            points: vec![],
        }
    }

    fn query(relation: Relation, anchor: Option<usize>, angle: f64) -> RelationQuery {
        RelationQuery {
            relation,
            anchor,
            category: Some(0),
            speaker_angle: angle,
            margin: 0.15,
        }
    }

    #[test]
    fn mirror_pair_is_ambiguous_for_left_of() {
        // Both candidates share the same x offset from the anchor.
        let s = Scene {
            id: 0,
            objects: vec![obj(1, 0.0, 0.0), obj(0, -1.0, 1.0), obj(0, -1.0, -1.0)],
        };
        assert_eq!(relation_oracle(&s, &query(Relation::LeftOf, Some(0), 0.0)).unwrap(), Resolution::Ambiguous);
        // ...but front/behind separates them.
        assert_eq!(
            relation_oracle(&s, &query(Relation::InFrontOf, Some(0), 0.0)).unwrap(),
            Resolution::Unique(2)
        );
    }

    #[test]
    fn nearest_picks_the_closer_object() {
        let s = Scene {
            id: 0,
            objects: vec![obj(1, 0.0, 0.0), obj(0, 3.0, 0.0), obj(0, 0.0, 1.0)],
        };
        assert_eq!(relation_oracle(&s, &query(Relation::NearestTo, Some(0), 0.0)).unwrap(), Resolution::Unique(2));
        assert_eq!(relation_oracle(&s, &query(Relation::FarthestFrom, Some(0), 0.0)).unwrap(), Resolution::Unique(1));
    }

    #[test]
    fn half_turn_swaps_left_and_right() {
        let s = Scene {
            id: 0,
            objects: vec![obj(1, 0.0, 0.0), obj(0, -1.0, 0.2), obj(0, 2.0, -0.3)],
        };
        let left_back = relation_oracle(&s, &query(Relation::LeftOf, Some(0), PI)).unwrap();
        let right_front = relation_oracle(&s, &query(Relation::RightOf, Some(0), 0.0)).unwrap();
        assert_eq!(left_back, Resolution::Unique(2));
        assert_eq!(left_back, right_front);
    }

    #[test]
    fn directional_winner_must_be_on_the_stated_side() {
        let s = Scene {
            id: 0,
            objects: vec![obj(1, 0.0, 0.0), obj(0, 1.0, 0.0)],
        };
        assert_eq!(relation_oracle(&s, &query(Relation::LeftOf, Some(0), 0.0)).unwrap(), Resolution::Ambiguous);
        assert_eq!(relation_oracle(&s, &query(Relation::RightOf, Some(0), 0.0)).unwrap(), Resolution::Unique(1));
    }

    #[test]
    fn missing_anchor_is_argument_error() {
        let s = Scene {
            id: 0,
            objects: vec![obj(0, 0.0, 0.0), obj(0, 1.0, 0.0)],
        };
        assert!(matches!(
            relation_oracle(&s, &query(Relation::LeftOf, None, 0.0)),
            Err(Error::Argument(_))
        ));
        assert!(relation_oracle(&s, &query(Relation::ClosestToCenter, None, 0.0)).is_ok());
    }

    #[test]
    fn relation_names_round_trip() {
        for r in Relation::ALL {
            assert_eq!(Relation::parse(r.as_str()), Some(r));
        }
    }
}
