use proptest::prelude::*;

use dedupt_core::corpus::{chronological_split, Corpus, CrashReport};
use dedupt_core::eval::{mrr, recall_at_k, RankingOutcome};
use dedupt_core::preprocess::{preprocess, remove_consecutive_duplicates, PreprocessConfig, TraceKey, TrimLevel};
use dedupt_core::ranker::rank_by_scores;
use dedupt_core::trace::{detect_and_parse, parse_gdb, parse_java, Language, StackFrame, StackTrace};

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,7}"
}

fn java_frame_line() -> impl Strategy<Value = String> {
    (prop::collection::vec(ident(), 1..4), ident(), ident(), 1u32..5000)
        .prop_map(|(path, method, file, line)| format!("\tat {}.{method}({file}.java:{line})", path.join(".")))
}

fn gdb_frame_line() -> impl Strategy<Value = String> {
    (0usize..40, any::<u32>(), ident(), ident(), 1u32..5000)
        .prop_map(|(k, addr, func, file, line)| format!("#{k}  0x{addr:x} in {func} () at {file}.c:{line}"))
}

fn noise_line() -> impl Strategy<Value = String> {
    "[^\n]{0,30}".prop_filter("not a frame", |s| !s.contains(" at ") && !s.trim_start().starts_with("at ") && !s.contains('#'))
}

fn mixed_text(frames: impl Strategy<Value = String>) -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![3 => frames, 1 => noise_line()], 0..20).prop_map(|lines| lines.join("\n"))
}

fn java_trace() -> impl Strategy<Value = StackTrace> {
    let frame = (prop::collection::vec(ident(), 1..4), ident(), ident(), prop::option::of(1u32..5000));
    (prop::collection::vec(frame, 1..30), prop::option::of(ident())).prop_map(|(frames, exception)| {
        let frames = frames
            .into_iter()
            .map(|(path, function, file, line)| {
                let mut f = StackFrame::new(path.join("."), function);
                f.source_file = format!("{file}.java");
                f.line = line;
                f
            })
            .collect();
        let header = exception.map(|e| format!("java.lang.{e}Exception")).unwrap_or_default();
        StackTrace::new(Language::Java, header, frames)
    })
}

fn cpp_trace() -> impl Strategy<Value = StackTrace> {
    let frame = (prop::collection::vec(ident(), 0..3), ident(), ident(), 1u32..5000);
    prop::collection::vec(frame, 1..20).prop_map(|frames| {
        let frames = frames
            .into_iter()
            .map(|(ns, function, file, line)| {
                let mut f = StackFrame::new(ns.join("::"), function);
                f.source_file = format!("{file}.c");
                f.line = Some(line);
                f
            })
            .collect();
        StackTrace::new(Language::Cpp, "", frames)
    })
}

type Fields = (String, String, String, Option<u32>);

fn structure(traces: &[StackTrace]) -> Vec<Vec<Fields>> {
    traces
        .iter()
        .map(|t| {
            t.frames
                .iter()
                .map(|f| (f.qualified_path.clone(), f.function.clone(), f.source_file.clone(), f.line))
                .collect()
        })
        .collect()
}

fn raw_in_order(text: &str, traces: &[StackTrace]) -> bool {
    let mut from = 0;
    for frame in traces.iter().flat_map(|t| &t.frames) {
        match text[from..].find(frame.raw.as_str()) {
            Some(at) => from += at + frame.raw.len(),
            None => return false,
        }
    }
    true
}

fn trim_level() -> impl Strategy<Value = TrimLevel> {
    prop_oneof![Just(TrimLevel::L0), Just(TrimLevel::L1), Just(TrimLevel::L2)]
}

proptest! {
    #[test]
    fn parsers_accept_any_text(text in any::<String>()) {
        let _ = parse_java(&text);
        let _ = parse_gdb(&text);
        let _ = detect_and_parse(&text);
    }

    #[test]
    fn parsers_accept_frame_like_garbage(text in "(at |#[0-9] |in |\\(|\\)|:|\\.|[a-z]|0x[0-9a-f]|\n| ){0,80}") {
        for trace in parse_java(&text).iter().chain(&parse_gdb(&text)) {
            prop_assert!(!trace.frames.is_empty());
        }
    }

    #[test]
    fn java_raw_fields_keep_line_order(text in mixed_text(java_frame_line())) {
        let traces = parse_java(&text);
        prop_assert_eq!(traces.iter().map(|t| t.frames.len()).sum::<usize>(), text.lines().filter(|l| l.starts_with("\tat ")).count());
        prop_assert!(raw_in_order(&text, &traces));
    }

    #[test]
    fn gdb_raw_fields_keep_line_order(text in mixed_text(gdb_frame_line())) {
        let traces = parse_gdb(&text);
        prop_assert!(raw_in_order(&text, &traces));
        for frame in traces.iter().flat_map(|t| &t.frames) {
            prop_assert!(!frame.function.starts_with("0x"));
        }
    }

    #[test]
    fn java_render_then_parse_is_stable(trace in java_trace()) {
        let once = parse_java(&trace.to_text());
        let text = once.iter().map(StackTrace::to_text).collect::<String>();
        let twice = parse_java(&text);
        prop_assert_eq!(structure(&once), structure(std::slice::from_ref(&trace)));
        prop_assert_eq!(structure(&twice), structure(&once));
    }

    #[test]
    fn gdb_render_then_parse_is_stable(trace in cpp_trace()) {
        let once = parse_gdb(&trace.to_text());
        let text = once.iter().map(StackTrace::to_text).collect::<String>();
        prop_assert_eq!(structure(&once), structure(std::slice::from_ref(&trace)));
        prop_assert_eq!(structure(&parse_gdb(&text)), structure(&once));
    }

    #[test]
    fn passages_use_a_small_alphabet(trace in java_trace(), top_n in 1usize..15, trim in trim_level(), header in any::<bool>()) {
        let config = PreprocessConfig { top_n, trim_level: trim, include_header: header, ..PreprocessConfig::new(Language::Java) };
        let passage = preprocess(&trace, &config, TraceKey::new("r", 0)).unwrap();
        prop_assert!(passage.text.chars().all(|c| c == ' ' || c == '.' || c.is_ascii_digit() || c.is_ascii_lowercase()), "{}", passage.text);
        let deduplicated = remove_consecutive_duplicates(&trace).frames.len();
        prop_assert_eq!(passage.frame_count, top_n.min(deduplicated));
        let body = passage.text.strip_suffix('.').unwrap();
        let mut sentences: Vec<&str> = body.split(". ").collect();
        if header && !trace.exception_header.is_empty() {
            prop_assert!(sentences.remove(0).starts_with("exc "));
        }
        let markers: Vec<&str> = sentences.iter().map(|s| s.split(' ').next().unwrap()).collect();
        let expected: Vec<String> = (1..=passage.frame_count).map(|k| format!("f{k}")).collect();
        prop_assert_eq!(markers, expected);
    }

    #[test]
    fn coarser_trimming_keeps_a_subset_of_tokens(trace in java_trace()) {
        let render = |trim| {
            let config = PreprocessConfig { trim_level: trim, include_header: false, ..PreprocessConfig::new(Language::Java) };
            preprocess(&trace, &config, TraceKey::new("r", 0)).unwrap().text
        };
        let (l0, l2) = (render(TrimLevel::L0), render(TrimLevel::L2));
        for (coarse, fine) in l2.split(". ").zip(l0.split(". ")) {
            let fine: Vec<&str> = fine.trim_end_matches('.').split(' ').collect();
            for token in coarse.trim_end_matches('.').split(' ') {
                prop_assert!(fine.contains(&token), "{token} not in {fine:?}");
            }
        }
    }

    #[test]
    fn splits_partition_the_corpus(days in prop::collection::vec(0u32..400, 1..60), train in 1u32..200, val in 1u32..100, test in 1u32..200) {
        let reports = days.iter().enumerate().map(|(i, &day)| CrashReport {
            report_id: format!("r{i}"),
            timestamp_day: day,
            bucket_id: format!("b{}", i % 7),
            traces: vec![StackTrace::from_frame_names(Language::Java, &["a.B.c"])],
        }).collect();
        let corpus = Corpus::new(Language::Java, reports).unwrap();
        let split = chronological_split(&corpus, train, val, test).unwrap();
        let mut beyond = 0;
        for report in corpus.reports() {
            let id = &report.report_id;
            let homes = [&split.train, &split.val, &split.test].iter().filter(|s| s.contains(id)).count();
            prop_assert!(homes <= 1);
            let day = report.timestamp_day;
            if split.train.contains(id) { prop_assert!(split.train_days.contains(day)); }
            if split.val.contains(id) { prop_assert!(split.val_days.contains(day)); }
            if split.test.contains(id) { prop_assert!(split.test_days.contains(day)); }
            if homes == 0 { beyond += 1; }
        }
        prop_assert_eq!(beyond, split.out_of_range(&corpus));
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len() + beyond, corpus.len());
    }

    #[test]
    fn reciprocal_rank_bounds(ranks in prop::collection::vec(prop::option::of(1usize..50), 1..100)) {
        let outcomes: Vec<RankingOutcome> = ranks.iter().enumerate().map(|(i, &r)| RankingOutcome {
            query_id: format!("q{i}"),
            true_bucket_rank: r,
            top1_score: 0.0,
            has_true_duplicate: true,
        }).collect();
        let m = mrr(&outcomes).unwrap();
        prop_assert!(recall_at_k(&outcomes, 1).unwrap() <= m);
        prop_assert!((0.0..=1.0).contains(&m));
        let recalls: Vec<f64> = (1..=60).map(|k| recall_at_k(&outcomes, k).unwrap()).collect();
        prop_assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bucket_order_ignores_candidate_order(
        cells in prop::collection::vec((0usize..6, 0u32..30, 0u8..5), 1..25),
        seed in any::<u64>(),
    ) {
        let reports: Vec<CrashReport> = cells.iter().enumerate().map(|(i, &(bucket, day, _))| CrashReport {
            report_id: format!("r{i:02}"),
            timestamp_day: day,
            bucket_id: format!("b{bucket}"),
            traces: Vec::new(),
        }).collect();
        let query = CrashReport { report_id: "q".into(), timestamp_day: 40, bucket_id: "b0".into(), traces: Vec::new() };
        let scored: Vec<(&CrashReport, f64)> = reports.iter().zip(&cells).map(|(r, c)| (r, f64::from(c.2) / 4.0)).collect();
        let mut shuffled = scored.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = rank_by_scores(&query, &scored).unwrap();
        let b = rank_by_scores(&query, &shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.buckets.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
