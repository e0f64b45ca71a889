//! Frame-by-frame orchestration: decode, detect, classify, command and
//! emit one NDJSON event per frame, strictly in input order.

use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{annotate_frame, AnnotateStyle, FaceMark};
use crate::cascade::{parse_cascade, CascadeError, CascadeModel};
use crate::detect::{detect_faces, ScanError, ScanParams};
use crate::emotion::{load_weights, EmotionClassifier, EmotionError, EmotionLabel, EmotionScores};
use crate::image::{decode_image, parse_header, FormatError, GrayImage, Rect, RgbImage};
use crate::tracking::{compute_command, select_target, torso_command, HeadCommand, TorsoCommand, TrackState};

/// Frames whose file extension (case-insensitive) is one of these are read
/// in directory mode.
pub const FRAME_EXTENSIONS: [&str; 3] = ["pgm", "ppm", "pnm"];

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    File(PathBuf),
    /// Every frame file in the directory, sorted by file name.
    Directory(PathBuf),
    /// Concatenated binary PGM/PPM frames on standard input.
    Stdin,
}

impl InputSource {
    /// `-` is standard input, an existing directory is directory mode,
    /// anything else a single file.
    pub fn from_arg(arg: &str) -> Self {
        let path = Path::new(arg);
        if arg == "-" {
            InputSource::Stdin
        } else if path.is_dir() {
            InputSource::Directory(path.to_path_buf())
        } else {
            InputSource::File(path.to_path_buf())
        }
    }
}

/// Everything `run` needs besides the models themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cascade: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub input: Option<InputSource>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub emit_annotated: bool,
    /// Adds per-stage wall-clock timings to every event.
    pub timing: bool,
    pub scan: ScanParams,
    pub track: TrackState,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cascade: None,
            weights: None,
            input: None,
            out: None,
            workers: 1,
            emit_annotated: false,
            timing: false,
            scan: ScanParams::default(),
            track: TrackState::default(),
        }
    }
}

/// A frame as read from the input, not yet decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub source: String,
    pub bytes: Result<Vec<u8>, String>,
}

/// One classified face in an event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDetection {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub neighbors: usize,
    pub stage_score: f64,
    pub label: EmotionLabel,
    pub scores: EmotionScores,
}

/// Milliseconds spent per stage on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub detect_ms: f64,
    pub classify_ms: f64,
    pub annotate_ms: f64,
}

/// One NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEvent {
    pub frame_index: usize,
    pub source: String,
    /// Sorted by `(x, y, w)`.
    pub detections: Vec<FaceDetection>,
    pub head_cmd: Option<HeadCommand>,
    pub torso_cmd: Option<TorsoCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimings>,
    /// Set when the frame could not be read, decoded or processed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameEvent {
    fn failed(frame_index: usize, source: String, error: String) -> Self {
        FrameEvent {
            frame_index,
            source,
            detections: Vec::new(),
            head_cmd: None,
            torso_cmd: None,
            timing: None,
            error: Some(error),
        }
    }

    /// The event as one line of JSON, newline included.
    pub fn to_ndjson(&self) -> String {
        let mut line = serde_json::to_string(self).expect("events always serialize");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub event: FrameEvent,
    pub annotated: Option<RgbImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub frames: usize,
    pub failed_frames: usize,
    pub detections: usize,
}

/// A loaded detector and classifier plus the per-frame settings.
pub struct Pipeline<'a> {
    pub cascade: &'a CascadeModel,
    pub classifier: &'a dyn EmotionClassifier,
    pub scan: ScanParams,
    pub track: TrackState,
    /// `Some` renders an annotated frame per event.
    pub annotate: Option<AnnotateStyle>,
    pub timing: bool,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Pipeline<'_> {
    pub fn process_frame(&self, frame: &Frame) -> FrameOutput {
        let failed = |e: String| FrameOutput {
            event: FrameEvent::failed(frame.index, frame.source.clone(), e),
            annotated: None,
        };
        let bytes = match &frame.bytes {
            Ok(b) => b,
            Err(e) => return failed(e.clone()),
        };
        let t = Instant::now();
        let img = match decode_image(bytes) {
            Ok(img) => img,
            Err(e) => return failed(e.to_string()),
        };
        let decode_ms = ms_since(t);
        match self.process_image(frame.index, &frame.source, &img) {
            Ok(mut out) => {
                if let Some(timing) = out.event.timing.as_mut() {
                    timing.decode_ms = decode_ms;
                }
                out
            }
            Err(e) => failed(e),
        }
    }

    /// Everything after decoding.
    pub fn process_image(&self, frame_index: usize, source: &str, img: &GrayImage) -> Result<FrameOutput, String> {
        let t = Instant::now();
        let boxes = detect_faces(img, self.cascade, &self.scan).map_err(|e: ScanError| e.to_string())?;
        let detect_ms = ms_since(t);

        let t = Instant::now();
        let mut detections = Vec::with_capacity(boxes.len());
        for b in &boxes {
            let (label, scores) = self.classifier.classify(img, b.rect).map_err(|e| e.to_string())?;
            detections.push(FaceDetection {
                rect: b.rect,
                neighbors: b.neighbors,
                stage_score: b.stage_score,
                label,
                scores,
            });
        }
        let classify_ms = ms_since(t);

        let track = self.track.with_frame(img.width(), img.height());
        let target = select_target(&boxes, &track);
        let head_cmd = target.as_ref().map(|t| compute_command(t, &track));
        let torso_cmd = target.as_ref().and_then(|t| torso_command(t, &track));

        let t = Instant::now();
        let annotated = self.annotate.map(|style| {
            let marks: Vec<FaceMark> = detections
                .iter()
                .map(|d| FaceMark {
                    rect: d.rect,
                    label: d.label,
                    scores: d.scores,
                })
                .collect();
            annotate_frame(img, &marks, style)
        });
        let annotate_ms = ms_since(t);

        let timing = self.timing.then_some(StageTimings {
            decode_ms: 0.0,
            detect_ms,
            classify_ms,
            annotate_ms,
        });
        Ok(FrameOutput {
            event: FrameEvent {
                frame_index,
                source: source.to_string(),
                detections,
                head_cmd,
                torso_cmd,
                timing,
                error: None,
            },
            annotated,
        })
    }

    /// Processes `frames` on `workers` threads and hands each output to
    /// `sink` in input order. Output does not depend on `workers`.
    pub fn run<E>(
        &self,
        frames: impl Iterator<Item = Frame>,
        workers: usize,
        mut sink: impl FnMut(FrameOutput) -> Result<(), E>,
    ) -> Result<RunSummary, E> {
        use rayon::prelude::*;
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        let mut summary = RunSummary::default();
        let mut frames = frames.peekable();
        let batch_size = workers * 2;
        while frames.peek().is_some() {
            let batch: Vec<Frame> = frames.by_ref().take(batch_size).collect();
            let outputs: Vec<FrameOutput> = pool.install(|| batch.par_iter().map(|f| self.process_frame(f)).collect());
            for out in outputs {
                summary.frames += 1;
                summary.detections += out.event.detections.len();
                if out.event.error.is_some() {
                    summary.failed_frames += 1;
                }
                sink(out)?;
            }
        }
        Ok(summary)
    }
}

/// Frame files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn file_frame(index: usize, path: &Path) -> Frame {
    Frame {
        index,
        source: path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
        bytes: std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display())),
    }
}

/// Frames of a file or directory source. Files are read lazily.
pub fn file_frames(source: &InputSource) -> io::Result<Box<dyn Iterator<Item = Frame>>> {
    match source {
        InputSource::File(path) => Ok(Box::new(std::iter::once(file_frame(0, path)))),
        InputSource::Directory(dir) => {
            let paths = list_frames(dir)?;
            Ok(Box::new(paths.into_iter().enumerate().map(|(i, p)| file_frame(i, &p))))
        }
        InputSource::Stdin => Ok(Box::new(FrameStream::new(io::stdin().lock()))),
    }
}

/// Splits a byte stream of concatenated binary PGM/PPM images into frames.
/// Whitespace between images is skipped. After a malformed header the
/// stream cannot be resynchronized, so one error frame is yielded and
/// iteration stops.
pub struct FrameStream<R> {
    reader: R,
    buf: Vec<u8>,
    eof: bool,
    index: usize,
    done: bool,
}

impl<R: BufRead> FrameStream<R> {
    pub fn new(reader: R) -> Self {
        FrameStream {
            reader,
            buf: Vec::new(),
            eof: false,
            index: 0,
            done: false,
        }
    }

    fn fill(&mut self, at_least: usize) -> io::Result<()> {
        while !self.eof && self.buf.len() < at_least {
            let chunk = self.reader.fill_buf()?;
            if chunk.is_empty() {
                self.eof = true;
                break;
            }
            let n = chunk.len();
            self.buf.extend_from_slice(chunk);
            self.reader.consume(n);
        }
        Ok(())
    }

    fn next_frame(&mut self) -> Result<Option<Vec<u8>>, String> {
        loop {
            let skip = self.buf.iter().take_while(|c| c.is_ascii_whitespace()).count();
            self.buf.drain(..skip);
            if self.buf.is_empty() {
                if self.eof {
                    return Ok(None);
                }
                self.fill(1).map_err(|e| e.to_string())?;
                continue;
            }
            match parse_header(&self.buf) {
                Ok(header) => {
                    let len = header.encoded_len();
                    self.fill(len).map_err(|e| e.to_string())?;
                    if self.buf.len() < len {
                        let e = FormatError::Truncated {
                            offset: header.data_offset,
                            needed: header.payload_len(),
                            available: self.buf.len() - header.data_offset,
                        };
                        return Err(e.to_string());
                    }
                    let rest = self.buf.split_off(len);
                    return Ok(Some(std::mem::replace(&mut self.buf, rest)));
                }
                Err(e) if self.eof => return Err(e.to_string()),
                Err(_) => {
                    let want = self.buf.len() + 4096;
                    self.fill(want).map_err(|e| e.to_string())?;
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for FrameStream<R> {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.done {
            return None;
        }
        let bytes = match self.next_frame() {
            Ok(Some(bytes)) => Ok(bytes),
            Ok(None) => {
                self.done = true;
                return None;
            }
            Err(e) => {
                self.done = true;
                Err(e)
            }
        };
        let index = self.index;
        self.index += 1;
        Some(Frame {
            index,
            source: format!("stream:{index}"),
            bytes,
        })
    }
}

/// Reads every frame from a reader of concatenated images.
pub fn stream_frames(reader: impl Read) -> FrameStream<io::BufReader<impl Read>> {
    FrameStream::new(io::BufReader::new(reader))
}

/// One entry of the simulated robot's command log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandLogEntry {
    pub frame_index: usize,
    pub head_cmd: Option<HeadCommand>,
    pub torso_cmd: Option<TorsoCommand>,
    /// Integrated head pose after this entry, radians.
    pub head_yaw: f64,
    pub head_pitch: f64,
    /// Integrated torso lift after this entry, metres.
    pub torso_lift: f64,
}

/// Stands in for the robot's command subscribers: integrates every command
/// into a pose and logs one entry per event that carries a command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotSink {
    pub head_yaw: f64,
    pub head_pitch: f64,
    pub torso_lift: f64,
}

impl RobotSink {
    pub fn push(&mut self, event: &FrameEvent) -> Option<CommandLogEntry> {
        if event.head_cmd.is_none() && event.torso_cmd.is_none() {
            return None;
        }
        if let Some(cmd) = &event.head_cmd {
            self.head_yaw += cmd.yaw_increment;
            self.head_pitch += cmd.pitch_increment;
        }
        if let Some(cmd) = &event.torso_cmd {
            self.torso_lift += cmd.lift_increment;
        }
        Some(CommandLogEntry {
            frame_index: event.frame_index,
            head_cmd: event.head_cmd.clone(),
            torso_cmd: event.torso_cmd.clone(),
            head_yaw: self.head_yaw,
            head_pitch: self.head_pitch,
            torso_lift: self.torso_lift,
        })
    }
}

/// Command log for a whole event sequence, starting from the rest pose.
pub fn simulated_robot_sink(events: &[FrameEvent]) -> Vec<CommandLogEntry> {
    let mut sink = RobotSink::default();
    events.iter().filter_map(|e| sink.push(e)).collect()
}

/// Writes NDJSON lines and, when enabled, `frame_NNNNN.ppm` files.
pub struct OutputWriter<W: Write> {
    pub events: W,
    pub annotated_dir: Option<PathBuf>,
}

impl<W: Write> OutputWriter<W> {
    pub fn write(&mut self, out: &FrameOutput) -> io::Result<()> {
        self.events.write_all(out.event.to_ndjson().as_bytes())?;
        if let (Some(dir), Some(img)) = (&self.annotated_dir, &out.annotated) {
            std::fs::write(dir.join(annotated_name(out.event.frame_index)), crate::image::encode_rgb(img))?;
        }
        Ok(())
    }
}

pub fn annotated_name(frame_index: usize) -> String {
    format!("frame_{frame_index:05}.ppm")
}

/// Startup and output failures. Per-frame failures become error events instead.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no {0} configured")]
    Missing(&'static str),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cascade {path}: {source}")]
    Cascade { path: PathBuf, source: CascadeError },
    #[error("weights {path}: {source}")]
    Weights { path: PathBuf, source: EmotionError },
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("invalid tracking parameters")]
    Track,
    #[error("workers must be at least 1")]
    Workers,
    #[error("annotated output needs an output directory")]
    AnnotateWithoutOut,
    #[error("input: {0}")]
    Input(io::Error),
    #[error("output: {0}")]
    Output(io::Error),
}

fn read_path(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|source| PipelineError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the models, processes every input frame and writes the outputs.
///
/// With an output directory, events go to `events.ndjson` and the robot
/// command log to `commands.ndjson` inside it, plus `frame_NNNNN.ppm` per
/// frame when annotation is enabled. Without one, events go to `stdout`.
pub fn run_pipeline(config: &PipelineConfig, stdout: &mut dyn Write) -> Result<RunSummary, PipelineError> {
    let cascade_path = config.cascade.as_deref().ok_or(PipelineError::Missing("cascade"))?;
    let weights_path = config.weights.as_deref().ok_or(PipelineError::Missing("weights"))?;
    let input = config.input.as_ref().ok_or(PipelineError::Missing("input"))?;
    let cascade = parse_cascade(&read_path(cascade_path)?).map_err(|source| PipelineError::Cascade {
        path: cascade_path.to_path_buf(),
        source,
    })?;
    let net = load_weights(&read_path(weights_path)?).map_err(|source| PipelineError::Weights {
        path: weights_path.to_path_buf(),
        source,
    })?;
    config.scan.validate(&cascade)?;
    if !config.track.is_valid() {
        return Err(PipelineError::Track);
    }
    if config.workers == 0 {
        return Err(PipelineError::Workers);
    }
    if config.emit_annotated && config.out.is_none() {
        return Err(PipelineError::AnnotateWithoutOut);
    }
    let frames = file_frames(input).map_err(PipelineError::Input)?;

    let pipeline = Pipeline {
        cascade: &cascade,
        classifier: &net,
        scan: config.scan,
        track: config.track,
        annotate: config.emit_annotated.then_some(AnnotateStyle::FULL),
        timing: config.timing,
    };
    let mut sink = RobotSink::default();
    match &config.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(PipelineError::Output)?;
            let create = |name: &str| {
                std::fs::File::create(dir.join(name))
                    .map(io::BufWriter::new)
                    .map_err(PipelineError::Output)
            };
            let mut writer = OutputWriter {
                events: create("events.ndjson")?,
                annotated_dir: config.emit_annotated.then(|| dir.clone()),
            };
            let mut commands = create("commands.ndjson")?;
            let summary = pipeline
                .run(frames, config.workers, |out| {
                    writer.write(&out)?;
                    if let Some(entry) = sink.push(&out.event) {
                        let line = serde_json::to_string(&entry).expect("log entries serialize");
                        writeln!(commands, "{line}")?;
                    }
                    Ok(())
                })
                .map_err(PipelineError::Output)?;
            writer.events.flush().map_err(PipelineError::Output)?;
            commands.flush().map_err(PipelineError::Output)?;
            Ok(summary)
        }
        None => pipeline
            .run(frames, config.workers, |out| stdout.write_all(out.event.to_ndjson().as_bytes()))
            .map_err(PipelineError::Output),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_gray;

    #[test]
    fn stream_splits_concatenated_frames() {
        let a = GrayImage::filled(3, 2, 7);
        let b = GrayImage::filled(1, 1, 9);
        let mut bytes = encode_gray(&a);
        bytes.extend_from_slice(b"\n\n");
        bytes.extend(encode_gray(&b));
        let frames: Vec<Frame> = stream_frames(bytes.as_slice()).collect();
        assert_eq!(frames.len(), 2);
        assert_eq!(decode_image(frames[0].bytes.as_ref().unwrap()).unwrap(), a);
        assert_eq!(decode_image(frames[1].bytes.as_ref().unwrap()).unwrap(), b);
        assert_eq!(frames[1].source, "stream:1");
    }

    #[test]
    fn stream_reports_truncation_then_stops() {
        let mut bytes = encode_gray(&GrayImage::filled(4, 4, 1));
        bytes.extend_from_slice(b"P5\n4 4\n255\n123");
        let frames: Vec<Frame> = stream_frames(bytes.as_slice()).collect();
        assert_eq!(frames.len(), 2);
        assert!(frames[0].bytes.is_ok());
        assert!(frames[1].bytes.as_ref().unwrap_err().contains("truncated"));
    }

    #[test]
    fn stream_of_one_byte_reads_works() {
        struct Trickle<'a>(&'a [u8]);
        impl Read for Trickle<'_> {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                if self.0.is_empty() || buf.is_empty() {
                    return Ok(0);
                }
                buf[0] = self.0[0];
                self.0 = &self.0[1..];
                Ok(1)
            }
        }
        let mut bytes = encode_gray(&GrayImage::filled(5, 3, 2));
        bytes.extend(encode_gray(&GrayImage::filled(2, 2, 3)));
        let frames: Vec<Frame> = FrameStream::new(io::BufReader::with_capacity(1, Trickle(&bytes))).collect();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.bytes.is_ok()));
    }

    #[test]
    fn garbage_stream_yields_one_error() {
        let frames: Vec<Frame> = stream_frames(&b"hello world"[..]).collect();
        assert_eq!(frames.len(), 1);
        assert!(frames[0].bytes.is_err());
    }

    #[test]
    fn sink_logs_only_events_with_commands() {
        let cmd = HeadCommand {
            topic: crate::tracking::HEAD_TOPIC.to_string(),
            yaw_increment: 0.1,
            pitch_increment: -0.05,
        };
        let mut events = vec![FrameEvent::failed(0, "a".into(), "x".into()); 4];
        for (i, e) in events.iter_mut().enumerate() {
            e.frame_index = i;
        }
        assert!(simulated_robot_sink(&events).is_empty());
        events[1].head_cmd = Some(cmd.clone());
        events[3].head_cmd = Some(cmd);
        let log = simulated_robot_sink(&events);
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].frame_index, 3);
        assert!((log[1].head_yaw - 0.2).abs() < 1e-12);
    }
}
