use indexmap::IndexMap;

use super::SeedDocument;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("collection and id must be nonempty")]
    EmptyKey,
    #[error("no document `{id}` in collection `{collection}`")]
    Absent { collection: String, id: String },
    #[error("value is not storable: {0}")]
    InvalidValue(String),
}

/// In-memory keyed document store backing the persistence API during test
/// runs. Collections and documents keep insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentStore {
    collections: IndexMap<String, IndexMap<String, Value>>,
}

fn check_key(collection: &str, id: &str) -> Result<(), StoreError> {
    if collection.is_empty() || id.is_empty() {
        Err(StoreError::EmptyKey)
    } else {
        Ok(())
    }
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seeded(seed: &[SeedDocument]) -> Self {
        let mut store = DocumentStore::new();
        for doc in seed {
            store.collections.entry(doc.collection.clone()).or_default().insert(doc.id.clone(), doc.value.clone());
        }
        store
    }

    /// Inserts or overwrites; an overwritten document keeps its position.
    pub fn save(&mut self, collection: &str, id: &str, value: Value) -> Result<Value, StoreError> {
        check_key(collection, id)?;
        value.canonicalize().map_err(|e| StoreError::InvalidValue(e.to_string()))?;
        self.collections.entry(collection.to_string()).or_default().insert(id.to_string(), value.clone());
        Ok(value)
    }

    pub fn get(&self, collection: &str, id: &str) -> Result<Option<Value>, StoreError> {
        check_key(collection, id)?;
        Ok(self.collections.get(collection).and_then(|c| c.get(id)).cloned())
    }

    pub fn update(&mut self, collection: &str, id: &str, value: Value) -> Result<Value, StoreError> {
        check_key(collection, id)?;
        value.canonicalize().map_err(|e| StoreError::InvalidValue(e.to_string()))?;
        match self.collections.get_mut(collection).and_then(|c| c.get_mut(id)) {
            Some(slot) => {
                *slot = value.clone();
                Ok(value)
            }
            None => Err(StoreError::Absent { collection: collection.into(), id: id.into() }),
        }
    }

    pub fn remove(&mut self, collection: &str, id: &str) -> Result<bool, StoreError> {
        check_key(collection, id)?;
        Ok(self.collections.get_mut(collection).and_then(|c| c.shift_remove(id)).is_some())
    }

    pub fn list(&self, collection: &str) -> Vec<Value> {
        self.collections.get(collection).map(|c| c.values().cloned().collect()).unwrap_or_default()
    }

    pub fn dump(&self) -> Vec<SeedDocument> {
        self.collections
            .iter()
            .flat_map(|(collection, docs)| {
                docs.iter().map(move |(id, value)| SeedDocument {
                    collection: collection.clone(),
                    id: id.clone(),
                    value: value.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::sample_todo;

    #[test]
    fn save_then_get_round_trips() {
        let mut s = DocumentStore::new();
        let todo = sample_todo("1", "buy milk");
        assert_eq!(s.save("todos", "1", todo.clone()).unwrap(), todo);
        assert_eq!(s.get("todos", "1").unwrap(), Some(todo));
        assert_eq!(s.get("todos", "2").unwrap(), None);
    }

    #[test]
    fn remove_absent_is_false() {
        let mut s = DocumentStore::new();
        assert_eq!(s.remove("todos", "missing"), Ok(false));
        s.save("todos", "1", sample_todo("1", "a")).unwrap();
        assert_eq!(s.remove("todos", "1"), Ok(true));
        assert!(s.list("todos").is_empty());
    }

    #[test]
    fn update_absent_is_an_error() {
        let mut s = DocumentStore::new();
        assert_eq!(
            s.update("todos", "9", Value::Null),
            Err(StoreError::Absent { collection: "todos".into(), id: "9".into() })
        );
        s.save("todos", "9", Value::Null).unwrap();
        assert_eq!(s.update("todos", "9", Value::Bool(true)), Ok(Value::Bool(true)));
    }

    #[test]
    fn list_follows_seed_order() {
        // Ids chosen so that neither lexicographic nor numeric order matches
        // the seed order.
        let seed: Vec<SeedDocument> = [("b", "walk dog"), ("10", "buy milk"), ("a", "pay rent")]
            .iter()
            .map(|(id, title)| SeedDocument {
                collection: "todos".into(),
                id: id.to_string(),
                value: sample_todo(id, title),
            })
            .collect();
        let s = DocumentStore::seeded(&seed);
        let titles: Vec<_> = s
            .list("todos")
            .iter()
            .map(|v| v.as_object().unwrap()["title"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(titles, vec!["walk dog", "buy milk", "pay rent"]);
        assert_eq!(s.dump(), seed);
    }

    #[test]
    fn overwrite_keeps_position_and_rejects_empty_keys() {
        let mut s = DocumentStore::new();
        s.save("c", "x", Value::from(1i64)).unwrap();
        s.save("c", "y", Value::from(2i64)).unwrap();
        s.save("c", "x", Value::from(3i64)).unwrap();
        assert_eq!(s.list("c"), vec![Value::from(3i64), Value::from(2i64)]);
        assert_eq!(s.save("", "x", Value::Null), Err(StoreError::EmptyKey));
        assert_eq!(s.get("c", ""), Err(StoreError::EmptyKey));
    }
}
