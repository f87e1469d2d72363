use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{normalize_category_name, EntityRecord, EntitySchema, GenericEntity, RawCategorization};

use super::{into_string, EvalError, MethodOutput};

/// Column header of the pipeline's own output.
pub const CASE_STUDY_OURS: &str = "Ours";

const EMPTY_CELL: &str = "-";
const ARROW: &str = " → ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRow {
    pub entity_type: String,
    pub attribute: String,
    pub cells: Vec<String>,
}

impl CaseRow {
    pub fn label(&self) -> String {
        format!("{}{ARROW}{}", self.entity_type, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub clip_id: String,
    pub columns: Vec<String>,
    pub rows: Vec<CaseRow>,
}

impl CaseStudy {
    pub fn row(&self, label: &str) -> Option<&CaseRow> {
        self.rows.iter().find(|r| r.label() == label)
    }

    pub fn cell(&self, label: &str, column: &str) -> Option<&str> {
        let col = self.columns.iter().position(|c| c == column)?;
        self.row(label).map(|r| r.cells[col].as_str())
    }

    fn header(&self) -> Vec<String> {
        let mut header = vec![format!("Entity{ARROW}Attribute")];
        header.extend(self.columns.iter().cloned());
        header
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(self.header()).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.label()];
            rec.extend(row.cells.iter().cloned());
            w.write_record(rec).map_err(csv_err)?;
        }
        into_string(w)
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let mut table = vec![self.header()];
        for row in &self.rows {
            let mut line = vec![row.label()];
            line.extend(row.cells.iter().cloned());
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in table.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out
    }
}

fn is_name(attribute: &str) -> bool {
    normalize_category_name(attribute) == "name"
}

struct Group {
    key: String,
    entity_type: String,
    attributes: Vec<String>,
    /// `cells[attribute][column]`
    cells: Vec<Vec<Vec<String>>>,
}

struct Table {
    groups: Vec<Group>,
    columns: usize,
}

impl Table {
    fn group(&mut self, entity_type: &str) -> usize {
        let key = normalize_category_name(entity_type);
        if let Some(i) = self.groups.iter().position(|g| g.key == key) {
            return i;
        }
        self.groups.push(Group {
            key,
            entity_type: entity_type.to_string(),
            attributes: Vec::new(),
            cells: Vec::new(),
        });
        self.groups.len() - 1
    }

    fn attribute(&mut self, g: usize, attribute: &str) -> usize {
        let key = normalize_category_name(attribute);
        let group = &mut self.groups[g];
        if let Some(i) = group
            .attributes
            .iter()
            .position(|a| normalize_category_name(a) == key)
        {
            return i;
        }
        group.attributes.push(attribute.to_string());
        group.cells.push(vec![Vec::new(); self.columns]);
        group.attributes.len() - 1
    }

    fn declare(&mut self, entity_type: &str, attributes: impl IntoIterator<Item = impl AsRef<str>>) {
        let g = self.group(entity_type);
        for a in attributes {
            if !is_name(a.as_ref()) {
                self.attribute(g, a.as_ref());
            }
        }
    }

    /// First row of a group, created as `Name` when the group has none.
    fn first_row(&mut self, g: usize) -> usize {
        if self.groups[g].attributes.is_empty() {
            self.attribute(g, "Name")
        } else {
            0
        }
    }

    fn put(&mut self, g: usize, a: usize, column: usize, value: &str) {
        let value = value.trim();
        let cell = &mut self.groups[g].cells[a][column];
        if !value.is_empty() && !cell.iter().any(|v| v == value) {
            cell.push(value.to_string());
        }
    }

    /// The entity's name, when it has one, prefixes its first attribute
    /// cell instead of getting a row of its own.
    fn place_ours(&mut self, entity: &GenericEntity) {
        let g = self.group(&entity.entity_type);
        let name = entity
            .attributes
            .iter()
            .find(|a| is_name(&a.name))
            .map(|a| a.value.trim())
            .filter(|v| !v.is_empty());
        let mut placed: Vec<(usize, &str)> = entity
            .attributes
            .iter()
            .filter(|a| !is_name(&a.name))
            .map(|a| (self.attribute(g, &a.name), a.value.as_str()))
            .collect();
        placed.sort_by_key(|(row, _)| *row);
        match (placed.first().copied(), name) {
            (Some((row, value)), Some(name)) => {
                let value = value.trim();
                let joined = if value.is_empty() {
                    name.to_string()
                } else {
                    format!("{name}{ARROW}{value}")
                };
                self.put(g, row, 0, &joined);
                for (row, value) in &placed[1..] {
                    self.put(g, *row, 0, value);
                }
            }
            (_, None) => {
                for (row, value) in &placed {
                    self.put(g, *row, 0, value);
                }
            }
            (None, Some(name)) => {
                let row = self.first_row(g);
                self.put(g, row, 0, name);
            }
        }
    }

    fn place_baseline(&mut self, column: usize, output: &MethodOutput) {
        let g = self.group(&output.entity_type);
        let row = self.first_row(g);
        self.put(g, row, column, &output.value);
        for attr in output.attributes.iter().flatten() {
            if !is_name(&attr.name) {
                let row = self.attribute(g, &attr.name);
                self.put(g, row, column, &attr.value);
            }
        }
    }

    fn rows(self) -> Vec<CaseRow> {
        let mut rows = Vec::new();
        for group in self.groups {
            for (attribute, cells) in group.attributes.into_iter().zip(group.cells) {
                if cells.iter().all(Vec::is_empty) {
                    continue;
                }
                rows.push(CaseRow {
                    entity_type: group.entity_type.clone(),
                    attribute,
                    cells: cells
                        .into_iter()
                        .map(|c| if c.is_empty() { EMPTY_CELL.to_string() } else { c.join("; ") })
                        .collect(),
                });
            }
        }
        rows
    }
}

/// Side-by-side view of one clip: our generic and extracted entities in
/// the first column, then one column per baseline method. Rows follow
/// generic entities, then the schema's entity and attribute order, then
/// anything only a baseline reported. A baseline's bare value lands in its
/// entity type's first row.
pub fn case_study(
    clip_id: &str,
    categorizations: &[RawCategorization],
    records: &[EntityRecord],
    schemas: &BTreeMap<String, EntitySchema>,
    baselines: &[MethodOutput],
    methods: &[String],
) -> Result<CaseStudy, EvalError> {
    let categorization = categorizations.iter().find(|c| c.clip_id == clip_id);
    let record = records.iter().find(|r| r.clip_id == clip_id);
    let clip_outputs: Vec<&MethodOutput> = baselines.iter().filter(|o| o.clip_id == clip_id).collect();
    if categorization.is_none() && record.is_none() && clip_outputs.is_empty() {
        return Err(EvalError::UnknownClip(clip_id.to_string()));
    }

    let mut table = Table {
        groups: Vec::new(),
        columns: methods.len() + 1,
    };
    let generic = categorization.map_or(&[][..], |c| c.generic_entities.as_slice());
    let extracted = record.map_or(&[][..], |r| r.entities.as_slice());
    for e in generic {
        table.declare(&e.entity_type, e.attributes.iter().map(|a| &a.name));
    }
    if let Some(schema) = record.and_then(|r| schemas.get(&r.canonical_category)) {
        for def in &schema.entities {
            table.declare(&def.name, def.attributes.iter().map(|a| &a.name));
        }
    }
    for e in generic.iter().chain(extracted) {
        table.place_ours(e);
    }
    for (i, method) in methods.iter().enumerate() {
        for output in clip_outputs.iter().filter(|o| &o.method == method) {
            table.place_baseline(i + 1, output);
        }
    }

    let mut columns = vec![CASE_STUDY_OURS.to_string()];
    columns.extend(methods.iter().cloned());
    Ok(CaseStudy {
        clip_id: clip_id.to_string(),
        columns,
        rows: table.rows(),
    })
}
