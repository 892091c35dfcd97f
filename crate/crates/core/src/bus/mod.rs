//! In-process publish/subscribe over named, schema-typed topics.
//!
//! Every subscriber owns a bounded queue. Sensor-style topics drop the
//! oldest envelope when a queue is full and count the drop; reliable topics
//! refuse the publish instead. Sequence numbers are assigned per
//! (publisher, topic) under the topic table lock, so each subscriber sees a
//! publisher's envelopes in sequence order.

pub mod msgs;

use std::cell::Cell;
use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

pub use msgs::{Payload, SchemaId};

pub const SENSOR_QUEUE_CAPACITY: usize = 64;
pub const RELIABLE_QUEUE_CAPACITY: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Delivery {
    /// Full queues discard their oldest envelope.
    DropOldest,
    /// Full queues make the publish fail.
    Reliable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TopicDecl {
    pub name: String,
    pub schema_id: SchemaId,
    pub delivery: Delivery,
    pub capacity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PublisherId(pub u64);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageEnvelope {
    pub topic: String,
    pub publisher: PublisherId,
    pub seq: u64,
    /// Seconds since the bus was created.
    pub timestamp: f64,
    pub payload: Payload,
}

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` carries {expected}, got {got}")]
    SchemaMismatch { topic: String, expected: SchemaId, got: SchemaId },
    #[error("topic `{topic}` is already declared with {existing}")]
    SchemaConflict { topic: String, existing: SchemaId },
    #[error("`{0}` is not a valid topic name")]
    BadTopicName(String),
    #[error("a subscriber queue on reliable topic `{0}` is full")]
    QueueFull(String),
}

struct Queue {
    buf: Mutex<VecDeque<MessageEnvelope>>,
    ready: Condvar,
    dropped: AtomicU64,
    capacity: usize,
}

struct Topic {
    decl: TopicDecl,
    subscribers: Vec<Weak<Queue>>,
    seqs: HashMap<PublisherId, u64>,
}

#[derive(Default)]
struct Table {
    topics: HashMap<String, Topic>,
    next_publisher: u64,
}

struct Inner {
    table: Mutex<Table>,
    epoch: Instant,
    tap: Mutex<Option<Box<dyn Write + Send>>>,
}

/// Cheap to clone; clones share the same topics.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

pub fn is_topic_name(name: &str) -> bool {
    name.starts_with('/')
        && name[1..].split('/').all(|seg| {
            !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        })
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            inner: Arc::new(Inner {
                table: Mutex::new(Table::default()),
                epoch: Instant::now(),
                tap: Mutex::new(None),
            }),
        }
    }

    /// Declares a drop-oldest topic with the sensor queue capacity.
    pub fn declare_topic(&self, name: &str, schema_id: SchemaId) -> Result<TopicDecl, BusError> {
        self.declare(name, schema_id, Delivery::DropOldest, SENSOR_QUEUE_CAPACITY)
    }

    /// Declares a no-drop topic; publishing into a full subscriber queue fails.
    pub fn declare_reliable_topic(&self, name: &str, schema_id: SchemaId) -> Result<TopicDecl, BusError> {
        self.declare(name, schema_id, Delivery::Reliable, RELIABLE_QUEUE_CAPACITY)
    }

    fn declare(
        &self,
        name: &str,
        schema_id: SchemaId,
        delivery: Delivery,
        capacity: usize,
    ) -> Result<TopicDecl, BusError> {
        if !is_topic_name(name) {
            return Err(BusError::BadTopicName(name.to_string()));
        }
        let mut table = self.inner.table.lock().unwrap();
        if let Some(existing) = table.topics.get(name) {
            return if existing.decl.schema_id == schema_id {
                Ok(existing.decl.clone())
            } else {
                Err(BusError::SchemaConflict {
                    topic: name.to_string(),
                    existing: existing.decl.schema_id,
                })
            };
        }
        let decl = TopicDecl { name: name.to_string(), schema_id, delivery, capacity };
        table.topics.insert(
            name.to_string(),
            Topic { decl: decl.clone(), subscribers: Vec::new(), seqs: HashMap::new() },
        );
        Ok(decl)
    }

    pub fn topics(&self) -> Vec<TopicDecl> {
        let table = self.inner.table.lock().unwrap();
        let mut decls: Vec<_> = table.topics.values().map(|t| t.decl.clone()).collect();
        decls.sort_by(|a, b| a.name.cmp(&b.name));
        decls
    }

    pub fn publisher(&self) -> Publisher {
        let mut table = self.inner.table.lock().unwrap();
        table.next_publisher += 1;
        Publisher { bus: self.clone(), id: PublisherId(table.next_publisher) }
    }

    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        let mut table = self.inner.table.lock().unwrap();
        let t = table
            .topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        let queue = Arc::new(Queue {
            buf: Mutex::new(VecDeque::with_capacity(t.decl.capacity)),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
            capacity: t.decl.capacity,
        });
        t.subscribers.retain(|w| w.strong_count() > 0);
        t.subscribers.push(Arc::downgrade(&queue));
        Ok(Subscription { queue, topic: topic.to_string(), _not_sync: PhantomData })
    }

    /// Mirrors every delivered envelope to `sink` as one JSON line.
    pub fn set_tap(&self, sink: Option<Box<dyn Write + Send>>) {
        *self.inner.tap.lock().unwrap() = sink;
    }

    fn publish(&self, publisher: PublisherId, topic: &str, payload: Payload) -> Result<u64, BusError> {
        let envelope = {
            let mut table = self.inner.table.lock().unwrap();
            let t = table
                .topics
                .get_mut(topic)
                .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
            if payload.schema() != t.decl.schema_id {
                return Err(BusError::SchemaMismatch {
                    topic: topic.to_string(),
                    expected: t.decl.schema_id,
                    got: payload.schema(),
                });
            }
            let live: Vec<Arc<Queue>> = t.subscribers.iter().filter_map(Weak::upgrade).collect();
            t.subscribers.retain(|w| w.strong_count() > 0);

            let mut guards: Vec<_> = live.iter().map(|q| q.buf.lock().unwrap()).collect();
            if t.decl.delivery == Delivery::Reliable
                && guards.iter().zip(&live).any(|(g, q)| g.len() >= q.capacity)
            {
                return Err(BusError::QueueFull(topic.to_string()));
            }

            let seq = t.seqs.entry(publisher).or_insert(0);
            *seq += 1;
            let envelope = MessageEnvelope {
                topic: topic.to_string(),
                publisher,
                seq: *seq,
                timestamp: self.inner.epoch.elapsed().as_secs_f64(),
                payload,
            };
            for (guard, q) in guards.iter_mut().zip(&live) {
                if guard.len() >= q.capacity {
                    guard.pop_front();
                    q.dropped.fetch_add(1, Ordering::Relaxed);
                }
                guard.push_back(envelope.clone());
                q.ready.notify_one();
            }
            envelope
        };
        if let Some(sink) = self.inner.tap.lock().unwrap().as_mut() {
            if let Ok(line) = serde_json::to_string(&envelope) {
                let _ = writeln!(sink, "{line}");
            }
        }
        Ok(envelope.seq)
    }
}

/// A publishing identity; sequence numbers are counted per publisher.
#[derive(Clone)]
pub struct Publisher {
    bus: Bus,
    id: PublisherId,
}

impl Publisher {
    pub fn id(&self) -> PublisherId {
        self.id
    }

    pub fn publish(&self, topic: &str, payload: Payload) -> Result<u64, BusError> {
        self.bus.publish(self.id, topic, payload)
    }
}

/// Receiving end of one subscription. Dropping it unsubscribes.
/// Can be moved across threads but not shared between them.
pub struct Subscription {
    queue: Arc<Queue>,
    topic: String,
    _not_sync: PhantomData<Cell<()>>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn try_recv(&self) -> Option<MessageEnvelope> {
        self.queue.buf.lock().unwrap().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<MessageEnvelope> {
        let guard = self.queue.buf.lock().unwrap();
        let (mut guard, _) = self
            .queue
            .ready
            .wait_timeout_while(guard, timeout, |buf| buf.is_empty())
            .unwrap();
        guard.pop_front()
    }

    pub fn drain(&self) -> Vec<MessageEnvelope> {
        self.queue.buf.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.buf.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}
