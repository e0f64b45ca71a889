use emoface::detect::DetectionBox;
use emoface::image::Rect;
use emoface::pipeline::{FrameEvent, RobotSink};
use emoface::tracking::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ticks_to_deadzone(trace: &[(f64, f64)], deadzone: f64) -> Option<usize> {
    trace.iter().position(|&(u, v)| u.abs() <= deadzone && v.abs() <= deadzone)
}

#[test]
fn static_targets_converge_monotonically() {
    let state = TrackState::default();
    // Offsets reach roughly ±0.9 of the half field of view.
    for &(yaw, pitch) in &[(0.45, 0.0), (-0.45, 0.3), (0.2, -0.35), (-0.1, 0.05), (0.0, -0.3)] {
        let trace = simulate_static_target(&state, yaw, pitch, 60);
        let hit = ticks_to_deadzone(&trace, state.deadzone).expect("converges");
        assert!(hit <= 50, "target ({yaw}, {pitch}) needed {hit} ticks");
        for w in trace[..=hit].windows(2) {
            assert!(w[1].0.abs() <= w[0].0.abs() + 1e-9);
            assert!(w[1].1.abs() <= w[0].1.abs() + 1e-9);
        }
        for &(u, v) in &trace[hit..] {
            assert!(u.abs() <= state.deadzone && v.abs() <= state.deadzone);
        }
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> TrackState {
    TrackState {
        frame_width: rng.random_range(64..1280),
        frame_height: rng.random_range(48..960),
        gain_yaw: rng.random_range(0.01..2.0),
        gain_pitch: rng.random_range(0.01..2.0),
        deadzone: rng.random_range(0.0..0.5),
        max_increment: rng.random_range(0.001..0.5),
        ..TrackState::default()
    }
}

#[test]
fn command_is_odd_bounded_and_zero_only_in_deadzone() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let state = random_state(&mut rng);
        let u = rng.random_range(-1.0..1.0);
        let v = rng.random_range(-1.0..1.0);
        let yaw = axis_increment(u, state.gain_yaw, state.deadzone, state.max_increment);
        let pitch = axis_increment(v, state.gain_pitch, state.deadzone, state.max_increment);
        assert_eq!(yaw, -axis_increment(-u, state.gain_yaw, state.deadzone, state.max_increment));
        assert_eq!(pitch, -axis_increment(-v, state.gain_pitch, state.deadzone, state.max_increment));
        assert!(yaw.abs() <= state.max_increment && pitch.abs() <= state.max_increment);
        assert_eq!(yaw == 0.0, u.abs() <= state.deadzone);
        assert_eq!(pitch == 0.0, v.abs() <= state.deadzone);
        // Sign: a face right of centre turns the head right (negative yaw).
        if u > state.deadzone {
            assert!(yaw < 0.0);
        }

        let side = rng.random_range(1..state.frame_height.min(state.frame_width) / 2);
        let x = rng.random_range(0..=state.frame_width - side);
        let y = rng.random_range(0..=state.frame_height - side);
        let face = DetectionBox {
            rect: Rect::new(x, y, side, side),
            neighbors: 3,
            stage_score: 0.0,
        };
        let cmd = compute_command(&face, &state);
        assert!(cmd.yaw_increment.abs() <= state.max_increment);
        assert!(cmd.pitch_increment.abs() <= state.max_increment);
        if let Some(t) = torso_command(&face, &state) {
            assert!(t.lift_increment.abs() <= state.torso_max_increment && t.lift_increment != 0.0);
        }
    }
}

#[test]
fn robot_sink_pose_converges_for_an_offcentre_face() {
    let state = TrackState::default();
    let mut head = SimulatedHead::new(&state);
    let mut sink = RobotSink::default();
    let (target_yaw, target_pitch) = (-0.4, 0.2);
    let mut log = Vec::new();
    for tick in 0..50 {
        head.yaw = sink.head_yaw;
        head.pitch = sink.head_pitch;
        let face = head.project(&state, target_yaw, target_pitch, 60);
        let event = FrameEvent {
            frame_index: tick,
            source: format!("sim:{tick}"),
            detections: Vec::new(),
            head_cmd: Some(compute_command(&face, &state)),
            torso_cmd: None,
            timing: None,
            error: None,
        };
        log.extend(sink.push(&event));
    }
    assert_eq!(log.len(), 50);
    let last = log.last().unwrap();
    head.yaw = last.head_yaw;
    head.pitch = last.head_pitch;
    let (cx, cy) = head.project(&state, target_yaw, target_pitch, 60).rect.center();
    let (u, v) = state.offsets(cx, cy);
    assert!(u.abs() <= state.deadzone && v.abs() <= state.deadzone, "({u}, {v})");
    // Within one pixel of the deadzone before rounding to the pixel grid.
    let (eu, ev) = head.observe(target_yaw, target_pitch);
    assert!(eu.abs() <= state.deadzone + 2.0 / 640.0 && ev.abs() <= state.deadzone + 2.0 / 480.0);
}
