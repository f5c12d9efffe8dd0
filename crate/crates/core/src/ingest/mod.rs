//! Record files, the gazetteer, ground-truth cities and the profile-location
//! veracity analysis.

mod gazetteer;
mod profile;
mod records;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

pub use gazetteer::{
    load_gazetteer, resolve_geotag, Gazetteer, GazetteerEntry, ResolvedGeotag,
    DEFAULT_MATCH_RADIUS_KM,
};
pub use profile::{match_profile_location, profile_distance_report, profile_tokens, DistanceCdf};
pub use records::{
    attach_profiles, extract_mentions, group_tweets, parse_profiles, parse_profiles_str, parse_records,
    parse_records_str,
    write_profiles, write_records, Parsed, PlaceBox, TweetRecord, UserProfile, UserRecord,
};

/// A user's home city: the modal city over their geotagged tweets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_id: String,
    pub city: u64,
    pub point: GeoPoint,
}

/// Modal resolved city over the user's tweets; ties go to the lowest
/// geoname id. `None` when no tweet resolves.
pub fn assign_ground_truth(u: &UserRecord, g: &Gazetteer, radius_km: f64) -> Option<GroundTruth> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for t in &u.tweets {
        if let Some(r) = resolve_geotag(t, g, radius_km) {
            *counts.entry(r.geoname_id).or_default() += 1;
        }
    }
    // ids ascend, so keeping the incumbent on ties yields the lowest id
    let (city, _) = counts
        .into_iter()
        .fold(None::<(u64, usize)>, |best, (id, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((id, n)),
        })?;
    let point = g.get(city)?.point;
    Some(GroundTruth {
        user_id: u.user_id.clone(),
        city,
        point,
    })
}

/// Ground truths for every user that has one, in user order.
pub fn assign_all(users: &[UserRecord], g: &Gazetteer, radius_km: f64) -> Vec<GroundTruth> {
    use rayon::prelude::*;
    users
        .par_iter()
        .filter_map(|u| assign_ground_truth(u, g, radius_km))
        .collect()
}
