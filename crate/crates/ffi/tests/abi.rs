use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use mien_asr_ffi::*;

fn fixture(rel: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { mien_string_free(s) };
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mien_last_error()) }.to_str().unwrap().to_string()
}

fn peaked(labels: &[u32], vocab: usize) -> (Vec<f64>, usize) {
    let em = mien_asr::synthetic::peaked_emissions(labels, vocab, 0.9).unwrap();
    (em.data().to_vec(), em.frames())
}

#[test]
fn parse_and_g2p() {
    unsafe {
        let mut inv = ptr::null_mut();
        let mut table = ptr::null_mut();
        assert_eq!(mien_inventory_builtin(&mut inv), MienStatus::Ok);
        assert_eq!(mien_g2p_builtin(&mut table), MienStatus::Ok);
        let word = CString::new("ginghgungv").unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(mien_parse_word(inv, word.as_ptr(), &mut s), MienStatus::Ok);
        assert_eq!(take(s), "g,-,i,ng,h g,-,u,ng,v");
        assert_eq!(mien_g2p(table, inv, word.as_ptr(), &mut s), MienStatus::Ok);
        assert_eq!(take(s), "k i ŋ 2 k u ŋ 3");

        let bad = CString::new("qqq").unwrap();
        s = ptr::null_mut();
        assert_eq!(mien_parse_word(inv, bad.as_ptr(), &mut s), MienStatus::InvalidArgument);
        assert!(s.is_null());
        assert!(last_error().contains("qqq"));
        assert_eq!(mien_parse_word(ptr::null(), word.as_ptr(), &mut s), MienStatus::NullPointer);
        mien_g2p_free(table);
        mien_inventory_free(inv);
        mien_inventory_free(ptr::null_mut());
    }
}

#[test]
fn ctc_round_trip() {
    let (lp, frames) = peaked(&[1, 2], 3);
    let labels = [1u32, 2];
    unsafe {
        let mut loss = 0.0;
        assert_eq!(mien_ctc_loss(lp.as_ptr(), frames, 3, labels.as_ptr(), 2, &mut loss), MienStatus::Ok);
        let em = mien_asr::emission::EmissionMatrix::new(frames, 3, lp.clone()).unwrap();
        assert_eq!(loss, mien_asr::ctc::ctc_loss(&em, &labels).unwrap());

        let mut grad = vec![0.0; frames * 3];
        let mut loss2 = 0.0;
        assert_eq!(mien_ctc_loss_grad(lp.as_ptr(), frames, 3, labels.as_ptr(), 2, &mut loss2, grad.as_mut_ptr()), MienStatus::Ok);
        assert_eq!(loss, loss2);
        for row in grad.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }

        let mut ids = [0u32; 1];
        let mut len = 0;
        assert_eq!(mien_greedy_decode(lp.as_ptr(), frames, 3, ids.as_mut_ptr(), 1, &mut len), MienStatus::BufferTooSmall);
        assert_eq!(len, 2);
        let mut ids = [0u32; 4];
        assert_eq!(mien_greedy_decode(lp.as_ptr(), frames, 3, ids.as_mut_ptr(), 4, &mut len), MienStatus::Ok);
        assert_eq!(&ids[..len], &[1, 2]);

        let blank = [0u32];
        assert_eq!(mien_ctc_loss(lp.as_ptr(), frames, 3, blank.as_ptr(), 1, &mut loss), MienStatus::InvalidArgument);
        let unnormalized = [0.0; 6];
        assert_eq!(mien_ctc_loss(unnormalized.as_ptr(), 2, 3, labels.as_ptr(), 2, &mut loss), MienStatus::InvalidArgument);
    }
}

#[test]
fn lm_and_bpe() {
    unsafe {
        let corpus = CString::new("a b\na c\nb").unwrap();
        let kn = CString::new("absolute").unwrap();
        let mut lm = ptr::null_mut();
        assert_eq!(mien_lm_train(corpus.as_ptr(), 2, kn.as_ptr(), &mut lm), MienStatus::Ok);
        let sentence = CString::new("a b").unwrap();
        let mut score = 0.0;
        assert_eq!(mien_lm_sentence_log10(lm, sentence.as_ptr(), &mut score), MienStatus::Ok);
        // P(a|<s>) P(b|a) P(</s>|b) on the toy corpus.
        let want = mien_asr::lm::lm_train(&["a b", "a c", "b"], 2, mien_asr::lm::Smoothing::Absolute)
            .unwrap()
            .sentence_log10(&["a", "b"]);
        assert_eq!(score, want);
        let bogus = CString::new("witten-bell").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(mien_lm_train(corpus.as_ptr(), 2, bogus.as_ptr(), &mut other), MienStatus::InvalidArgument);
        assert!(other.is_null());
        mien_lm_free(lm);

        let mut bpe = ptr::null_mut();
        assert_eq!(mien_bpe_load(fixture("tiny/bpe.model").as_ptr(), &mut bpe), MienStatus::Ok);
        let text = CString::new("iu mienh nqaang").unwrap();
        let mut ids = [0u32; 32];
        let mut len = 0;
        assert_eq!(mien_bpe_encode(bpe, text.as_ptr(), ids.as_mut_ptr(), 32, &mut len), MienStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(mien_bpe_decode(bpe, ids.as_ptr(), len, &mut s), MienStatus::Ok);
        assert_eq!(take(s), "iu mienh nqaang");
        mien_bpe_free(bpe);

        let missing = CString::new("/no/such/model").unwrap();
        assert_eq!(mien_bpe_load(missing.as_ptr(), &mut bpe), MienStatus::Io);
    }
}

#[test]
fn decoders_follow_the_library() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/homophone");
    let em = mien_asr::emission::load_emission(&dir.join("emissions"), "h01").unwrap();
    unsafe {
        let mut dec = ptr::null_mut();
        let st = mien_phoneme_decoder_new(
            fixture("homophone/lexicon.txt").as_ptr(),
            fixture("homophone/phoneme_vocab.txt").as_ptr(),
            fixture("homophone/lm.arpa").as_ptr(),
            &mut dec,
        );
        assert_eq!(st, MienStatus::Ok, "{}", last_error());
        let mut params = mien_decode_params_default();
        let mut text = ptr::null_mut();
        let mut score = 0.0;
        let run = |p: MienDecodeParams, text: &mut *mut c_char, score: &mut f64| {
            mien_decode(dec, em.data().as_ptr(), em.frames(), em.vocab_size(), p, text, score)
        };
        assert_eq!(run(params, &mut text, &mut score), MienStatus::Ok);
        assert_eq!(take(text), "yie mienh");
        params.lm_weight = 0.0;
        assert_eq!(run(params, &mut text, &mut score), MienStatus::Ok);
        assert_eq!(take(text), "yie mienv");
        params.beam_size = 0;
        assert_eq!(run(params, &mut text, &mut score), MienStatus::InvalidArgument);
        mien_decoder_free(dec);

        let mut sub = ptr::null_mut();
        let lm = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("tiny_lm.arpa");
        let corpus: Vec<String> = std::fs::read_to_string(dir.join("../tiny/corpus.tsv"))
            .unwrap()
            .lines()
            .map(|l| l.split('\t').nth(1).unwrap().to_string())
            .collect();
        mien_asr::lm::arpa_write(&mien_asr::lm::lm_train(&corpus, 2, mien_asr::lm::Smoothing::KneserNey).unwrap(), &lm).unwrap();
        let lm = CString::new(lm.to_str().unwrap()).unwrap();
        assert_eq!(mien_subword_decoder_new(fixture("tiny/bpe.model").as_ptr(), lm.as_ptr(), &mut sub), MienStatus::Ok);
        let em = mien_asr::emission::load_emission(&dir.join("../tiny/emissions_subword"), "utt03").unwrap();
        let st = mien_decode(sub, em.data().as_ptr(), em.frames(), em.vocab_size(), mien_decode_params_default(), &mut text, ptr::null_mut());
        assert_eq!(st, MienStatus::Ok, "{}", last_error());
        assert_eq!(take(text), corpus[2]);
        mien_decoder_free(sub);
    }
}

#[test]
fn error_rate_counts() {
    let r = CString::new("a b c d").unwrap();
    let h = CString::new("a x c").unwrap();
    let mut score = MienScore::default();
    unsafe {
        assert_eq!(mien_error_rate(r.as_ptr(), h.as_ptr(), &mut score), MienStatus::Ok);
    }
    assert_eq!((score.substitutions, score.deletions, score.insertions, score.reference_length), (1, 1, 0, 4));
    assert_eq!(score.rate, 0.5);
    let bad = [0xffu8, 0];
    unsafe {
        assert_eq!(mien_error_rate(bad.as_ptr().cast(), h.as_ptr(), &mut score), MienStatus::InvalidUtf8);
    }
}
