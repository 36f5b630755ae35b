//! Builds a vocabulary and round-trips a sentence through it.

use turnrank::tokenizer::{Vocabulary, SPECIAL_TOKENS};

fn main() -> turnrank::Result<()> {
    let texts = [
        "how do I mount a usb drive?",
        "try sudo mount /dev/sdb1 /mnt",
        "mount says permission denied",
        "then check dmesg for the drive",
    ];
    let vocab = Vocabulary::build(texts, 1, 40)?;
    println!("{} entries, specials first: {:?}", vocab.len(), &vocab.tokens()[..SPECIAL_TOKENS.len()]);

    let ids = vocab.tokenize("Mount the USB drive, then reboot [EOT]");
    println!("ids: {ids:?}");
    println!("back: {}", vocab.detokenize(&ids)?);
    print!("file:\n{}", vocab.to_file_string());
    Ok(())
}
