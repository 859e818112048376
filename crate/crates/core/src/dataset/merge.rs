use std::iter::Peekable;

use crate::event::{Event, Keyframe};

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Frame(Keyframe),
    Event(Event),
}

impl StreamItem {
    pub fn t(&self) -> u64 {
        match self {
            StreamItem::Frame(f) => f.t,
            StreamItem::Event(e) => e.t,
        }
    }
}

/// Time-ordered merge of two individually ordered streams. A frame precedes
/// events that share its timestamp.
pub struct MergeStreams<E: Iterator, F: Iterator> {
    events: Peekable<E>,
    frames: Peekable<F>,
}

pub fn merge_streams<E, F>(events: E, frames: F) -> MergeStreams<E::IntoIter, F::IntoIter>
where
    E: IntoIterator<Item = Event>,
    F: IntoIterator<Item = Keyframe>,
{
    MergeStreams {
        events: events.into_iter().peekable(),
        frames: frames.into_iter().peekable(),
    }
}

impl<E, F> Iterator for MergeStreams<E, F>
where
    E: Iterator<Item = Event>,
    F: Iterator<Item = Keyframe>,
{
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        let take_frame = match (self.frames.peek(), self.events.peek()) {
            (Some(f), Some(e)) => f.t <= e.t,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return None,
        };
        if take_frame {
            self.frames.next().map(StreamItem::Frame)
        } else {
            self.events.next().map(StreamItem::Event)
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let (el, eh) = self.events.size_hint();
        let (fl, fh) = self.frames.size_hint();
        (el + fl, eh.zip(fh).map(|(a, b)| a + b))
    }
}
