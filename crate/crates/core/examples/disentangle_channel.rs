//! Filters an entangled channel down to one speaker's thread.

use std::collections::HashSet;

use turnrank::corpus::{annotate_addressees, extract_spoken_to, Utterance};
use turnrank::disentangle::{assign_speaker_roles, cap_context, filter_channel};

fn main() {
    let lines = [
        ("ana", "has anyone set up wifi on the new kernel"),
        ("bo", "my sound card stopped working after the upgrade"),
        ("cy", "ana: which driver does lspci report"),
        ("ana", "cy: it says iwlwifi"),
        ("dee", "bo: try reinstalling pulseaudio"),
        ("cy", "ana: load the firmware package then reboot"),
        ("ed", "what time is the release meeting"),
    ];
    let mut channel: Vec<Utterance> = lines
        .iter()
        .enumerate()
        .map(|(i, (from, text))| Utterance::new(i, *from, *text))
        .collect();

    let known: HashSet<String> = channel.iter().map(|u| u.spoken_from.clone()).collect();
    println!("{:?}", extract_spoken_to("cy: it says iwlwifi", &known));
    annotate_addressees(&mut channel);

    let filtered = cap_context(filter_channel(&channel, "ana"), 25);
    let roles = assign_speaker_roles(&filtered);
    println!("thread of ana ({} of {} utterances):", filtered.len(), channel.len());
    for ((u, _), role) in filtered.utterances.iter().zip(roles) {
        println!("  #{} role {role} {:>4} -> {:<4} {}", u.index, u.spoken_from, u.spoken_to.as_deref().unwrap_or("-"), u.text);
    }
}
