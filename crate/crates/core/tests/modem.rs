mod common;

use common::PinModel;
use cpas_core::modem::{Modem, ModemConfig, ModemState, PinEvent};
use proptest::prelude::*;

fn pin_event() -> impl Strategy<Value = PinEvent> {
    prop_oneof![
        1 => Just(PinEvent::PowerOn),
        1 => Just(PinEvent::PowerOff),
        3 => Just(PinEvent::IgnitionLow),
        3 => Just(PinEvent::IgnitionHigh),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn boots_iff_delay_and_hold_are_met(
        steps in prop::collection::vec((pin_event(), 0u64..160), 1..30),
    ) {
        let mut m = Modem::new(ModemConfig::default());
        let mut model = PinModel::default();
        let mut t = 0;
        for (ev, dt) in steps {
            t += dt;
            let _ = m.apply_pin_event(ev, t);
            model.apply(ev, t);
            prop_assert_eq!(m.state() == ModemState::Booting, model.booted, "{:?} at {}", ev, t);
            prop_assert_eq!(m.stats().boots, model.boots);
        }
    }
}

#[test]
fn single_attempt_boundaries() {
    for delay in 0..=30 {
        for hold in 80..=130 {
            let mut m = Modem::new(ModemConfig::default());
            m.apply_pin_event(PinEvent::PowerOn, 1000).unwrap();
            let _ = m.apply_pin_event(PinEvent::IgnitionLow, 1000 + delay);
            let _ = m.apply_pin_event(PinEvent::IgnitionHigh, 1000 + delay + hold);
            let boots = m.state() == ModemState::Booting;
            assert_eq!(boots, delay >= 10 && hold > 100, "delay {delay} hold {hold}");
            assert_eq!(m.ignition_trace().is_valid(), boots, "delay {delay} hold {hold}");
        }
    }
}

#[test]
fn boot_completes_after_boot_duration() {
    let mut m = Modem::new(ModemConfig::default());
    m.apply_pin_event(PinEvent::PowerOn, 0).unwrap();
    m.apply_pin_event(PinEvent::IgnitionLow, 10).unwrap();
    m.apply_pin_event(PinEvent::IgnitionHigh, 111).unwrap();
    assert!(m.tick(2110).is_empty());
    assert_eq!(m.tick(2111).len(), 1);
    assert_eq!(m.state(), ModemState::SimReady);
}
