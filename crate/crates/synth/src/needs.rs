//! Need commands: templates, their inverse, and target resolution.

use rand::Rng;
use usersod_core::{rng, Attribute, AttributeMap, NeedCommand, Provenance, SceneRecord};

use crate::attributes::{Color, Shape, Size};
use crate::generator::GeneratorConfig;

pub fn coarse_command(shape: Shape) -> String {
    format!("I want to find a {shape}.")
}

pub fn fine_command(color: Color, size: Size, shape: Shape) -> String {
    format!("I want to find the {color} {size} {shape}.")
}

pub fn near_miss_command(color: Color, shape: Shape) -> String {
    format!("I want to find the {color} {shape}.")
}

/// Recover the requested attributes from a templated command.
pub fn parse_command(text: &str) -> Option<AttributeMap> {
    let body = text.strip_prefix("I want to find ")?.strip_suffix('.')?;
    let words: Vec<&str> = body.split(' ').collect();
    let mut req = AttributeMap::new();
    match words.as_slice() {
        ["a", shape] => {
            req.insert(Attribute::Shape, shape.parse::<Shape>().ok()?.to_string());
        }
        ["the", color, shape] => {
            req.insert(Attribute::Color, color.parse::<Color>().ok()?.to_string());
            req.insert(Attribute::Shape, shape.parse::<Shape>().ok()?.to_string());
        }
        ["the", color, size, shape] => {
            req.insert(Attribute::Color, color.parse::<Color>().ok()?.to_string());
            req.insert(Attribute::Size, size.parse::<Size>().ok()?.to_string());
            req.insert(Attribute::Shape, shape.parse::<Shape>().ok()?.to_string());
        }
        _ => return None,
    }
    Some(req)
}

/// Number of requested attributes the object does not have.
pub fn attribute_distance(attributes: &AttributeMap, requested: &AttributeMap) -> usize {
    requested
        .iter()
        .filter(|(k, v)| attributes.get(k) != Some(v))
        .count()
}

/// The object most similar to the request.
///
/// Similarity is the Hamming distance over the requested attributes; ties go
/// to the larger object, then to the smaller id.
pub fn resolve_need(scene: &SceneRecord, requested: &AttributeMap) -> u32 {
    scene
        .objects
        .iter()
        .min_by(|a, b| {
            let da = attribute_distance(&a.attributes, requested);
            let db = attribute_distance(&b.attributes, requested);
            da.cmp(&db)
                .then(b.mask.area().cmp(&a.mask.area()))
                .then(a.object_id.cmp(&b.object_id))
        })
        .expect("scene has at least one object")
        .object_id
}

fn attr<T: std::str::FromStr>(map: &AttributeMap, key: Attribute) -> Option<T> {
    map.get(&key)?.parse().ok()
}

/// Commands for every object (one coarse, one fine) plus an optional near miss.
///
/// Targets are assigned by [`resolve_need`] on each command's own attributes.
pub fn make_commands(scene: &SceneRecord, config: &GeneratorConfig) -> Vec<NeedCommand> {
    let mut texts = Vec::new();
    for o in &scene.objects {
        let (Some(shape), Some(color), Some(size)) = (
            attr::<Shape>(&o.attributes, Attribute::Shape),
            attr::<Color>(&o.attributes, Attribute::Color),
            attr::<Size>(&o.attributes, Attribute::Size),
        ) else {
            continue;
        };
        texts.push(coarse_command(shape));
        texts.push(fine_command(color, size, shape));
    }
    let mut r = rng::stream(scene.rng_seed, &[rng::label_id("near-miss")]);
    if r.gen_bool(config.near_miss_fraction.clamp(0.0, 1.0)) {
        let absent: Vec<(Color, Shape)> = config
            .palette
            .iter()
            .flat_map(|&c| config.shapes.iter().map(move |&s| (c, s)))
            .filter(|&(c, s)| {
                !scene.objects.iter().any(|o| {
                    attr::<Color>(&o.attributes, Attribute::Color) == Some(c)
                        && attr::<Shape>(&o.attributes, Attribute::Shape) == Some(s)
                })
            })
            .collect();
        if !absent.is_empty() {
            let (c, s) = absent[r.gen_range(0..absent.len())];
            texts.push(near_miss_command(c, s));
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let req = parse_command(&text).expect("templates are parseable");
            NeedCommand {
                command_id: i as u32,
                target_object_id: resolve_need(scene, &req),
                text,
                provenance: Provenance::SyntheticOracle,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_invert() {
        let req = parse_command("I want to find the red medium circle.").unwrap();
        assert_eq!(req.get(&Attribute::Color).unwrap(), "red");
        assert_eq!(req.get(&Attribute::Size).unwrap(), "medium");
        assert_eq!(req.get(&Attribute::Shape).unwrap(), "circle");
        assert_eq!(parse_command("I want to find a star.").unwrap().len(), 1);
        assert_eq!(parse_command("I want to find the blue square.").unwrap().len(), 2);
        assert!(parse_command("Find me a star.").is_none());
        assert!(parse_command("I want to find a dragon.").is_none());
    }
}
