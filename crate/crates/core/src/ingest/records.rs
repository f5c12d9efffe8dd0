use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};

/// Place bounding box attached to a tweet instead of exact coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceBox {
    pub corners: [GeoPoint; 4],
    pub place_name: String,
}

impl PlaceBox {
    pub fn bounds(&self) -> BoundingBox {
        BoundingBox::from_points(self.corners.iter()).expect("four corners")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    pub text: String,
    pub coords: Option<GeoPoint>,
    pub bbox: Option<PlaceBox>,
    pub mentions: Vec<String>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserRecord {
    pub user_id: String,
    /// Sorted by timestamp, then tweet id.
    pub tweets: Vec<TweetRecord>,
    pub profile_location: Option<String>,
    pub followees: Option<Vec<String>>,
}

impl UserRecord {
    /// Every mention made by the user, in tweet order.
    pub fn mentions(&self) -> impl Iterator<Item = &str> {
        self.tweets
            .iter()
            .flat_map(|t| t.mentions.iter().map(String::as_str))
    }
}

/// Items parsed from a line-oriented file plus the number of lines skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub malformed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RawTweet {
    pub tweet_id: String,
    pub user_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<String>>,
    pub ts: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RawProfile {
    pub user_id: String,
    #[serde(default)]
    pub profile_location: Option<String>,
    #[serde(default)]
    pub followees: Option<Vec<String>>,
}

/// User ids mentioned in `text`: whitespace tokens starting with `@`, cut at
/// the first character that cannot appear in a handle.
pub fn extract_mentions(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|tok| tok.strip_prefix('@'))
        .map(|rest| {
            rest.chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .collect::<String>()
        })
        .filter(|h| !h.is_empty())
        .collect()
}

impl TryFrom<RawTweet> for TweetRecord {
    type Error = Error;

    fn try_from(raw: RawTweet) -> Result<Self> {
        let coords = match (raw.lat, raw.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon)?),
            (None, None) => None,
            _ => return Err(Error::Parse("lat and lon must appear together".into())),
        };
        let bbox = match (raw.bbox, raw.place_name) {
            (Some(corners), Some(place_name)) => {
                if corners.len() != 4 {
                    return Err(Error::Parse(format!("bbox has {} corners", corners.len())));
                }
                let mut pts = [GeoPoint { lat: 0.0, lon: 0.0 }; 4];
                for (slot, [lat, lon]) in pts.iter_mut().zip(corners) {
                    *slot = GeoPoint::new(lat, lon)?;
                }
                Some(PlaceBox {
                    corners: pts,
                    place_name,
                })
            }
            (Some(_), None) => return Err(Error::Parse("bbox without place_name".into())),
            _ => None,
        };
        let mentions = raw.mentions.unwrap_or_else(|| extract_mentions(&raw.text));
        Ok(TweetRecord {
            tweet_id: raw.tweet_id,
            user_id: raw.user_id,
            text: raw.text,
            coords,
            bbox,
            mentions,
            timestamp: raw.ts,
        })
    }
}

impl From<&TweetRecord> for RawTweet {
    fn from(t: &TweetRecord) -> Self {
        RawTweet {
            tweet_id: t.tweet_id.clone(),
            user_id: t.user_id.clone(),
            text: t.text.clone(),
            lat: t.coords.map(|p| p.lat),
            lon: t.coords.map(|p| p.lon),
            bbox: t
                .bbox
                .as_ref()
                .map(|b| b.corners.iter().map(|p| [p.lat, p.lon]).collect()),
            place_name: t.bbox.as_ref().map(|b| b.place_name.clone()),
            mentions: Some(t.mentions.clone()),
            ts: t.timestamp,
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses JSON lines in parallel, keeping input order. Blank lines and
/// `#` comment lines are ignored; anything else that fails is counted.
pub(crate) fn parse_json_lines<R, T, F>(text: &str, convert: F) -> Parsed<T>
where
    R: for<'de> Deserialize<'de>,
    T: Send,
    F: Fn(R) -> Result<T> + Sync,
{
    let results: Vec<Option<Result<T>>> = text
        .par_lines()
        .map(|line| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            Some(
                serde_json::from_str::<R>(line)
                    .map_err(|e| Error::Parse(e.to_string()))
                    .and_then(&convert),
            )
        })
        .collect();
    let mut items = Vec::new();
    let mut malformed = 0;
    for r in results.into_iter().flatten() {
        match r {
            Ok(t) => items.push(t),
            Err(_) => malformed += 1,
        }
    }
    Parsed { items, malformed }
}

/// Groups tweets into users sorted by id; each user's tweets sorted by time.
pub fn group_tweets(tweets: Vec<TweetRecord>) -> Vec<UserRecord> {
    let mut by_user: BTreeMap<String, Vec<TweetRecord>> = BTreeMap::new();
    for t in tweets {
        by_user.entry(t.user_id.clone()).or_default().push(t);
    }
    by_user
        .into_iter()
        .map(|(user_id, mut tweets)| {
            tweets.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then_with(|| a.tweet_id.cmp(&b.tweet_id))
            });
            UserRecord {
                user_id,
                tweets,
                profile_location: None,
                followees: None,
            }
        })
        .collect()
}

/// Reads a tweet record file (one JSON object per line) into users.
pub fn parse_records(path: impl AsRef<Path>) -> Result<Parsed<UserRecord>> {
    let path = path.as_ref();
    let parsed = parse_records_str(&read_to_string(path)?);
    if parsed.malformed > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), parsed.malformed);
    }
    Ok(parsed)
}

pub fn parse_records_str(text: &str) -> Parsed<UserRecord> {
    let parsed = parse_json_lines::<RawTweet, _, _>(text, TweetRecord::try_from);
    Parsed {
        items: group_tweets(parsed.items),
        malformed: parsed.malformed,
    }
}

/// Profile-file line: location string and followee list.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub profile_location: Option<String>,
    pub followees: Option<Vec<String>>,
}

pub fn parse_profiles(path: impl AsRef<Path>) -> Result<Parsed<UserProfile>> {
    let path = path.as_ref();
    let parsed = parse_profiles_str(&read_to_string(path)?);
    if parsed.malformed > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), parsed.malformed);
    }
    Ok(parsed)
}

pub fn parse_profiles_str(text: &str) -> Parsed<UserProfile> {
    parse_json_lines::<RawProfile, _, _>(text, |r| {
        Ok(UserProfile {
            user_id: r.user_id,
            profile_location: r.profile_location,
            followees: r.followees,
        })
    })
}

/// Copies profile fields onto matching users. Returns how many profiles had
/// no matching user (they are not part of the dataset).
pub fn attach_profiles(users: &mut [UserRecord], profiles: Vec<UserProfile>) -> usize {
    let mut unmatched = 0;
    for p in profiles {
        match users.binary_search_by(|u| u.user_id.as_str().cmp(&p.user_id)) {
            Ok(i) => {
                users[i].profile_location = p.profile_location;
                users[i].followees = p.followees;
            }
            Err(_) => unmatched += 1,
        }
    }
    unmatched
}

/// Writes tweets of `users` in the record-file format.
pub fn write_records<W: Write>(mut w: W, users: &[UserRecord]) -> Result<()> {
    for u in users {
        for t in &u.tweets {
            let line = serde_json::to_string(&RawTweet::from(t)).expect("serializable");
            writeln!(w, "{line}").map_err(|e| Error::io("<records>", e))?;
        }
    }
    Ok(())
}

/// Writes the profile file for users carrying a location or followees.
pub fn write_profiles<W: Write>(mut w: W, users: &[UserRecord]) -> Result<()> {
    for u in users {
        if u.profile_location.is_none() && u.followees.is_none() {
            continue;
        }
        let raw = RawProfile {
            user_id: u.user_id.clone(),
            profile_location: u.profile_location.clone(),
            followees: u.followees.clone(),
        };
        let line = serde_json::to_string(&raw).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io("<profiles>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_no_users() {
        let f = write_tmp("");
        let parsed = parse_records(f.path()).unwrap();
        assert!(parsed.items.is_empty());
        assert_eq!(parsed.malformed, 0);
    }

    #[test]
    fn malformed_line_is_counted_not_fatal() {
        let f = write_tmp(
            "{\"tweet_id\":\"1\",\"user_id\":\"a\",\"text\":\"hi\",\"ts\":5}\n{not json\n",
        );
        let parsed = parse_records(f.path()).unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.malformed, 1);
    }

    #[test]
    fn invalid_coordinates_count_as_malformed() {
        let f = write_tmp(
            "{\"tweet_id\":\"1\",\"user_id\":\"a\",\"text\":\"\",\"lat\":95.0,\"lon\":0.0,\"ts\":1}\n\
             {\"tweet_id\":\"2\",\"user_id\":\"a\",\"text\":\"\",\"lat\":5.0,\"ts\":1}\n",
        );
        let parsed = parse_records(f.path()).unwrap();
        assert_eq!(parsed.malformed, 2);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(
            parse_records("/nonexistent/records.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn tweets_grouped_and_sorted_by_time() {
        let f = write_tmp(
            "{\"tweet_id\":\"3\",\"user_id\":\"u\",\"text\":\"c\",\"ts\":30}\n\
             {\"tweet_id\":\"1\",\"user_id\":\"u\",\"text\":\"a @bob hi\",\"ts\":10}\n\
             {\"tweet_id\":\"2\",\"user_id\":\"u\",\"text\":\"b\",\"ts\":20}\n",
        );
        let users = parse_records(f.path()).unwrap().items;
        assert_eq!(users.len(), 1);
        let ids: Vec<_> = users[0].tweets.iter().map(|t| t.tweet_id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert_eq!(users[0].tweets[0].mentions, ["bob"]);
    }

    #[test]
    fn mention_extraction() {
        assert_eq!(
            extract_mentions("hey @ana, @bob_2! mail a@b.c and @ alone"),
            ["ana", "bob_2"]
        );
    }

    #[test]
    fn explicit_mentions_field_wins_over_text() {
        let f = write_tmp(
            "{\"tweet_id\":\"1\",\"user_id\":\"u\",\"text\":\"@x\",\"mentions\":[\"y\"],\"ts\":1}\n",
        );
        let users = parse_records(f.path()).unwrap().items;
        assert_eq!(users[0].tweets[0].mentions, ["y"]);
    }

    #[test]
    fn bbox_requires_four_corners() {
        let ok = "{\"tweet_id\":\"1\",\"user_id\":\"u\",\"text\":\"\",\"bbox\":[[0,0],[0,1],[1,1],[1,0]],\"place_name\":\"X\",\"ts\":1}";
        let bad = "{\"tweet_id\":\"2\",\"user_id\":\"u\",\"text\":\"\",\"bbox\":[[0,0],[0,1]],\"place_name\":\"X\",\"ts\":1}";
        let f = write_tmp(&format!("{ok}\n{bad}\n"));
        let parsed = parse_records(f.path()).unwrap();
        assert_eq!(parsed.malformed, 1);
        assert!(parsed.items[0].tweets[0].bbox.is_some());
    }

    #[test]
    fn records_round_trip_through_writer() {
        let f = write_tmp(
            "{\"tweet_id\":\"1\",\"user_id\":\"u\",\"text\":\"a @b\",\"lat\":-34.5,\"lon\":-58.25,\"ts\":10}\n\
             {\"tweet_id\":\"2\",\"user_id\":\"v\",\"text\":\"z\",\"bbox\":[[0,0],[0,1],[1,1],[1,0]],\"place_name\":\"X\",\"ts\":11}\n",
        );
        let users = parse_records(f.path()).unwrap().items;
        let mut buf = Vec::new();
        write_records(&mut buf, &users).unwrap();
        let g = write_tmp(std::str::from_utf8(&buf).unwrap());
        assert_eq!(parse_records(g.path()).unwrap().items, users);
    }
}
