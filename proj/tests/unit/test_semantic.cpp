#include <gtest/gtest.h>

#include <filesystem>
#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "vad/core/jsonl.hpp"
#include "vad/core/rng.hpp"
#include "vad/semantic/caption.hpp"
#include "vad/semantic/mocks.hpp"
#include "vad/semantic/refine.hpp"
#include "vad/semantic/rules.hpp"
#include "vad/semantic/verify.hpp"

using namespace vad;
using namespace vad::semantic;

namespace {

std::string golden(const std::string& name) { return read_text(std::filesystem::path(VAD_TEST_DATA_DIR) / "golden/prompts" / name); }

FrameRef frame(const std::string& vid, std::size_t idx) { return {vid, idx, 0.0, Raster(4, 4)}; }

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> s;
  for (std::size_t i = 1; i <= n; ++i) s.push_back("s" + std::to_string(i) + ".");
  return s;
}

// Chunk starts by walking the stride until a full chunk no longer fits.
std::vector<std::size_t> enumerate_starts(std::size_t n, std::size_t m, std::size_t o) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + m <= n; s += m - o) out.push_back(s);
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vad_semantic_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

// ---- prompts -------------------------------------------------------------------

TEST(Prompts, TemplatesMatchGoldenFiles) {
  for (const auto& t : prompt_templates()) {
    EXPECT_EQ(std::string(t.text), golden(std::string(t.file))) << t.file;
    const auto versioned = std::filesystem::path(VAD_SOURCE_DIR) / "prompts" / std::string(kPromptVersion) / std::string(t.file);
    EXPECT_EQ(read_text(versioned), golden(std::string(t.file))) << versioned;
  }
}

TEST(Prompts, CompletedDecisionPromptMatchesPublishedExample) {
  const auto rules_text = golden("example_decision_rules.txt");
  const auto sec = parse_rule_sections(rules_text);
  ASSERT_EQ(sec.normal.size(), 5u);
  ASSERT_EQ(sec.anomaly.size(), 5u);
  EXPECT_EQ(format_rules(sec.normal, sec.anomaly), rules_text);
  EXPECT_EQ(decision_prompt(golden("example_caption.txt"), format_rules(sec.normal, sec.anomaly)),
            golden("example_decision_completed.txt"));
}

TEST(Prompts, RenderDoesNotReexpandValues) {
  EXPECT_EQ(render("a {caption} b", {{"caption", "{caption}"}}), "a {caption} b");
  EXPECT_EQ(render("{x", {{"x", "1"}}), "{x");
  const auto p = rule_generation_prompt("CAP");
  EXPECT_NE(p.find("description:\nCAP\n\nGenerate"), std::string::npos);
}

// ---- parsing -------------------------------------------------------------------

TEST(Verdict, PublishedExampleOutputParses) {
  const auto d = parse_decision(golden("example_decision_output.txt"));
  ASSERT_TRUE(d.has_value());
  EXPECT_TRUE(d->anomaly);
  ASSERT_EQ(d->broken_rules.size(), 3u);
  EXPECT_TRUE(d->broken_rules[0].starts_with("Individuals must move in a predictable and safe manner."));
  EXPECT_TRUE(d->broken_rules[2].starts_with("Individuals must not engage in public disturbances."));
}

TEST(Verdict, FormatContract) {
  auto d = parse_decision("Anomaly: No\nBroken Rules: None");
  ASSERT_TRUE(d);
  EXPECT_FALSE(d->anomaly);
  EXPECT_TRUE(d->broken_rules.empty());
  d = parse_decision("  anomaly:  YES \nbroken rules: [Cars must not collide]");
  ASSERT_TRUE(d);
  EXPECT_TRUE(d->anomaly);
  EXPECT_EQ(d->broken_rules, std::vector<std::string>{"Cars must not collide"});
  EXPECT_FALSE(parse_decision("The scene looks fine."));
  EXPECT_FALSE(parse_decision("Anomaly: maybe"));
  // Only the first Anomaly line counts.
  d = parse_decision("Anomaly: No\nAnomaly: Yes");
  EXPECT_FALSE(d->anomaly);
}

TEST(Rules, PublishedAggregatedOutputParses) {
  const auto sec = parse_rule_sections(golden("example_aggregated_rules.txt"));
  EXPECT_TRUE(sec.has_normal && sec.has_anomaly);
  EXPECT_EQ(sec.normal.size(), 4u);
  EXPECT_EQ(sec.anomaly.size(), 4u);
  EXPECT_EQ(sec.anomaly[3], "Climbing poles without authorization is prohibited for safety reasons.");
}

TEST(Rules, DedupByNormalizedText) {
  const std::vector<std::string> r{"No running.", "no  running", "Stay right.", "NO RUNNING;"};
  EXPECT_EQ(dedup_rules(r), (std::vector<std::string>{"No running.", "Stay right."}));
}

// ---- chunking and pooling ------------------------------------------------------

TEST(Chunking, WorkedExamples) {
  const auto s5 = numbered(5);
  EXPECT_EQ(chunk_caption(s5, 3, 1), (std::vector<std::string>{"s1. s2. s3.", "s3. s4. s5."}));
  const auto s3 = numbered(3);
  EXPECT_EQ(chunk_caption(s3, 3, 1), (std::vector<std::string>{"s1. s2. s3."}));
  const auto c7 = chunk_caption(numbered(7), 3, 2);
  ASSERT_EQ(c7.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_TRUE(c7[k].starts_with("s" + std::to_string(k + 1) + ".")) << c7[k];
  EXPECT_EQ(chunk_caption(numbered(2), 3, 1), (std::vector<std::string>{"s1. s2."}));
}

TEST(Chunking, CountMatchesEnumerationExhaustively) {
  for (std::size_t n = 1; n <= 30; ++n)
    for (std::size_t m = 1; m <= n; ++m)
      for (std::size_t o = 1; o < m; ++o) {
        const auto starts = enumerate_starts(n, m, o);
        ASSERT_EQ(chunk_count(n, m, o), starts.size()) << n << " " << m << " " << o;
        const auto chunks = chunk_caption(numbered(n), m, o);
        ASSERT_EQ(chunks.size(), starts.size());
        for (std::size_t k = 0; k < starts.size(); ++k) ASSERT_TRUE(chunks[k].starts_with("s" + std::to_string(starts[k] + 1) + "."));
      }
}

TEST(Chunking, OverlapMustBeBelowSize) {
  EXPECT_THROW(chunk_caption(numbered(5), 3, 3), ConfigError);
  EXPECT_THROW(chunk_caption(numbered(5), 3, 0), ConfigError);
  EXPECT_THROW((CaptionSettings{.chunk_size = 2, .chunk_overlap = 4}.validate()), ConfigError);
}

TEST(Chunking, SentenceSplitting) {
  EXPECT_EQ(split_sentences("A man walks. A car parks!  Is it late? yes"),
            (std::vector<std::string>{"A man walks.", "A car parks!", "Is it late?", "yes"}));
  EXPECT_EQ(split_sentences("Version 1.5 is out. Done."), (std::vector<std::string>{"Version 1.5 is out.", "Done."}));
  EXPECT_TRUE(split_sentences("  . ").empty());
}

TEST(Pooling, Contract) {
  const std::vector<std::vector<double>> one{{0.3, -2.0}};
  EXPECT_EQ(pool_chunks(one, Pooling::mean), one[0]);
  EXPECT_EQ(pool_chunks(one, Pooling::max), one[0]);
  const std::vector<std::vector<double>> two{{1, 0}, {0, 1}};
  EXPECT_EQ(pool_chunks(two, Pooling::mean), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(pool_chunks(two, Pooling::max), (std::vector<double>{1, 1}));
  const std::vector<std::vector<double>> bad{{1, 0}, {0, 1, 2}};
  EXPECT_THROW(pool_chunks(bad), ShapeError);
  EXPECT_THROW(pool_chunks(std::vector<std::vector<double>>{}), ShapeError);
}

// ---- refinement ----------------------------------------------------------------

TEST(Refine, SelfAndArgmax) {
  const std::vector<double> img{1, 2, 3};
  std::vector<Candidate> c{{4, "other", {3, -1, 0}}, {5, "self", {1, 2, 3}}, {6, "far", {-1, 0, 0}}};
  const auto r = refine_caption(img, c, 5, "orig");
  EXPECT_EQ(r.caption, "self");
  EXPECT_NEAR(r.similarity, 1.0, 1e-15);

  // Unit candidates at cosines 0.2, 0.9, 0.4 to e1.
  auto at = [](double cs) { return std::vector<double>{cs, std::sqrt(1 - cs * cs)}; };
  std::vector<Candidate> d{{0, "a", at(0.2)}, {1, "b", at(0.9)}, {2, "c", at(0.4)}};
  EXPECT_EQ(refine_caption(std::vector<double>{1, 0}, d, 1, "orig").source_position, 1);
}

TEST(Refine, EmptyWindowKeepsOriginal) {
  std::vector<Candidate> c{{40, "x", {1, 0}}};
  const auto r = refine_caption(std::vector<double>{1, 0}, c, 0, "orig");
  EXPECT_EQ(r.caption, "orig");
  EXPECT_EQ(r.source_position, 0);
  EXPECT_EQ(kDefaultRefineWindow, 10u);
}

TEST(Refine, TiesGoNearestThenEarlier) {
  std::vector<Candidate> c{{2, "left2", {1, 0}}, {4, "left", {2, 0}}, {6, "right", {5, 0}}, {5, "self", {0, 1}}};
  EXPECT_EQ(refine_caption(std::vector<double>{1, 0}, c, 5, "o").caption, "left");
  std::vector<Candidate> d{{7, "r", {1, 1}}, {3, "l", {2, 2}}};
  EXPECT_EQ(refine_caption(std::vector<double>{1, 1}, d, 5, "o").caption, "l");
}

TEST(Refine, ScaleInvariantAndInsideWindow) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.integer(0, 25));
    const long t = rng.integer(0, static_cast<int>(n) - 1);
    std::vector<Candidate> c;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> e(8);
      for (auto& x : e) x = rng.normal();
      c.push_back({static_cast<long>(i), "c" + std::to_string(i), e});
    }
    // Duplicate a candidate so that exact ties occur too.
    c[n / 2].embedding = c[0].embedding;
    std::vector<double> img(8);
    for (auto& x : img) x = rng.normal();
    for (auto mode : {RefineMode::local, RefineMode::global}) {
      const auto base = refine_caption(img, c, t, "o", mode);
      if (mode == RefineMode::local) EXPECT_TRUE(in_window(base.source_position, t, kDefaultRefineWindow));
      auto scaled = c;
      for (auto& s : scaled) {
        const double lam = std::exp(rng.uniform(-5, 5));
        for (auto& x : s.embedding) x *= lam;
      }
      auto img2 = img;
      for (auto& x : img2) x *= 3.7;
      EXPECT_EQ(refine_caption(img2, scaled, t, "o", mode).source_position, base.source_position);
    }
    const auto local = refine_caption(img, c, t, "o", RefineMode::local);
    const auto global = refine_caption(img, c, t, "o", RefineMode::global);
    EXPECT_GE(global.similarity, local.similarity);
  }
}

// ---- captioning and caches -----------------------------------------------------

TEST(Caption, MockEchoAndCache) {
  ScriptedCaptioner vlm;
  vlm.set("v", 3, "A person walks. A car waits.");
  EXPECT_EQ(*caption_frame(frame("v", 3), vlm), "A person walks. A car waits.");
  EXPECT_EQ(kDefaultMaxTokens, 200);

  auto cache = std::make_shared<ReplyCache>();
  CachedCaptioner cached(vlm, cache);
  const auto before = vlm.calls();
  EXPECT_TRUE(caption_frame(frame("v", 3), cached));
  EXPECT_EQ(vlm.calls(), before + 1);
  EXPECT_EQ(cache->hits(), 0u);
  EXPECT_TRUE(caption_frame(frame("v", 3), cached));
  EXPECT_EQ(vlm.calls(), before + 1);
  EXPECT_EQ(cache->hits(), 1u);
  // A different token budget is a different key.
  EXPECT_EQ(*caption_frame(frame("v", 3), cached, 2), "A person");
  EXPECT_EQ(vlm.calls(), before + 2);
}

TEST(Caption, DiskCacheSurvivesRestart) {
  const auto dir = temp_dir("cache");
  ScriptedCaptioner vlm;
  vlm.set("v", 1, "Hello.");
  {
    CachedCaptioner c(vlm, std::make_shared<ReplyCache>(dir));
    caption_frame(frame("v", 1), c);
  }
  auto cache = std::make_shared<ReplyCache>(dir);
  CachedCaptioner c(vlm, cache);
  EXPECT_EQ(*caption_frame(frame("v", 1), c), "Hello.");
  EXPECT_EQ(vlm.calls(), 1u);
  EXPECT_EQ(cache->hits(), 1u);
}

// Slow client: concurrent misses on one prompt must share a single call.
struct SlowLlm : LlmClient {
  std::atomic<int> calls{0};
  std::string complete(const std::string& prompt, int) override {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return "re: " + prompt;
  }
  std::string model_id() const override { return "slow"; }
};

TEST(Caption, ConcurrentMissesShareOneCall) {
  SlowLlm llm;
  auto cache = std::make_shared<ReplyCache>();
  CachedLlm cached(llm, cache);
  std::vector<std::thread> ts;
  std::vector<std::string> out(6);
  for (int i = 0; i < 6; ++i) ts.emplace_back([&, i] { out[i] = cached.complete(i % 2 ? "a" : "b", 10); });
  for (auto& t : ts) t.join();
  EXPECT_EQ(llm.calls.load(), 2);
  EXPECT_EQ(cache->misses(), 2u);
  EXPECT_EQ(cache->hits(), 4u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out[i], i % 2 ? "re: a" : "re: b");
}

TEST(Caption, RetriesThenMissing) {
  ScriptedCaptioner vlm;
  vlm.set("v", 0, "Ok.");
  const RetryPolicy fast{3, std::chrono::milliseconds(0)};
  vlm.fail_next(2);
  EXPECT_EQ(*caption_frame(frame("v", 0), vlm, 200, fast), "Ok.");
  EXPECT_EQ(vlm.calls(), 3u);
  vlm.fail_next(3);
  EXPECT_FALSE(caption_frame(frame("v", 0), vlm, 200, fast).has_value());
  EXPECT_EQ(vlm.calls(), 6u);
}

TEST(Caption, EmbeddedRecordShapes) {
  HashedBowEmbedder emb;
  const auto r = embed_caption("v", 2, "A car drives. A person walks. A dog runs. A cart stops. A bike turns.", emb, {});
  EXPECT_EQ(r.sentences.size(), 5u);
  EXPECT_EQ(r.chunks.size(), 2u);
  EXPECT_EQ(r.chunk_embeddings.size(), 2u);
  EXPECT_EQ(r.pooled.size(), 64u);
  EXPECT_EQ(r.pooled, pool_chunks(r.chunk_embeddings));
  const json j = r;
  EXPECT_EQ(json(j.get<CaptionRecord>()).dump(), j.dump());
}

TEST(Embedder, DeterministicAndWordBased) {
  HashedBowEmbedder emb(64, {{{"v", 0}, "a red car"}});
  EXPECT_EQ(emb.embed_text("A red car."), emb.embed_text("red   car"));
  EXPECT_EQ(emb.embed_image(frame("v", 0)), emb.embed_text("red car"));
  EXPECT_NE(emb.embed_text("red car"), emb.embed_text("blue bus"));
  EXPECT_THROW(emb.embed_image(frame("v", 1)), TransportError);
}

// ---- rules ---------------------------------------------------------------------

TEST(Rules, SamplesTwentyFramesPerVideo) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < 200; ++i) idx.push_back(i * 10);
  const auto s = sample_rule_frames(idx, 7, "vid");
  ASSERT_EQ(s.size(), 20u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(s, sample_rule_frames(idx, 7, "vid"));
  EXPECT_NE(s, sample_rule_frames(idx, 8, "vid"));

  std::vector<IndexedCaption> caps;
  for (auto f : s) caps.push_back({f, "A person walks near a car."});
  std::mutex mu;
  std::vector<std::string> prompts;
  FunctionLlm llm([&](const std::string& p) {
    std::lock_guard lock(mu);
    prompts.push_back(p);
    return std::string("### RULES FOR NORMAL ACTIVITIES OR OBJECTS\n- walk\n### RULES FOR ANOMALY ACTIVITIES OR OBJECTS\n- crash");
  });
  const auto frags = generate_rules(caps, llm);
  EXPECT_EQ(llm.calls(), 20u);
  ASSERT_EQ(frags.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(frags[i].frame_index, s[i]);
    EXPECT_TRUE(frags[i].well_formed);
    EXPECT_EQ(frags[i].text, "### RULES FOR NORMAL ACTIVITIES OR OBJECTS\n- walk\n### RULES FOR ANOMALY ACTIVITIES OR OBJECTS\n- crash");
  }
  for (const auto& p : prompts) EXPECT_EQ(p, rule_generation_prompt("A person walks near a car."));

  const std::vector<std::size_t> twelve(idx.begin(), idx.begin() + 12);
  EXPECT_EQ(sample_rule_frames(twelve, 7, "vid"), twelve);
}

TEST(Rules, MalformedFragmentKeptAndFlagged) {
  FunctionLlm llm([](const std::string&) { return std::string("Be careful out there."); });
  const auto f = generate_rules({{4, "cap"}}, llm);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_FALSE(f[0].well_formed);
  EXPECT_EQ(f[0].text, "Be careful out there.");
}

TEST(Rules, AggregationDedupsAndRepairs) {
  const std::vector<RuleFragment> frags{{0, "x", true}, {10, "y", true}};
  int n = 0;
  FunctionLlm llm([&](const std::string& p) {
    ++n;
    if (n == 1) {
      EXPECT_FALSE(p.ends_with(kRepairSuffix));
      return std::string("Sure! Here you go.");
    }
    EXPECT_TRUE(p.ends_with(kRepairSuffix));
    return std::string("=== RULES FOR NORMAL ACTIVITIES OR OBJECTS ===\n- Walk.\n- walk\n\n=== RULES FOR ANOMALY ACTIVITIES OR OBJECTS ===\n- Crash.");
  });
  const auto rs = aggregate_rules("v", frags, llm);
  EXPECT_EQ(rs.status, ParseStatus::repaired);
  EXPECT_EQ(rs.normal, std::vector<std::string>{"Walk."});
  EXPECT_EQ(rs.anomaly, std::vector<std::string>{"Crash."});
  EXPECT_EQ(rs.provenance, (std::vector<std::size_t>{0, 10}));

  FunctionLlm never([](const std::string&) { return std::string("no"); });
  EXPECT_THROW(aggregate_rules("v", frags, never), ParseError);
  EXPECT_EQ(never.calls(), 2u);

  FunctionLlm empty_anomaly([](const std::string&) {
    return std::string("=== RULES FOR NORMAL ACTIVITIES OR OBJECTS ===\n- Walk.\n\n=== RULES FOR ANOMALY ACTIVITIES OR OBJECTS ===\n");
  });
  EXPECT_EQ(aggregate_rules("v", frags, empty_anomaly).status, ParseStatus::failed);
  EXPECT_THROW(aggregate_rules("v", {}, never), ConfigError);
}

TEST(Rules, JsonRoundTrip) {
  RuleSet r{"v", {"a"}, {"b", "c"}, {1, 2}, ParseStatus::repaired, "raw"};
  const json j = r;
  EXPECT_EQ(json(j.get<RuleSet>()).dump(), j.dump());
}

// ---- verification --------------------------------------------------------------

TEST(Verify, KeywordMockOnScriptedCorpus) {
  KeywordRuleLlm llm;
  std::vector<IndexedCaption> sampled{{0, "A person walks. A car drives."}, {10, "A cyclist rides."}};
  const auto frags = generate_rules(sampled, llm);
  const auto rules = aggregate_rules("v", frags, llm);
  ASSERT_EQ(rules.status, ParseStatus::ok);
  EXPECT_EQ(rules.anomaly.size(), 3u);
  EXPECT_EQ(rules.normal.size(), 3u);

  const std::vector<std::pair<std::string, bool>> corpus{
      {"A person walks along the sidewalk.", false},
      {"A car collides with a person.", true},
      {"A cart is stopped, blocking the path of a person.", true},
      {"A cyclist makes a sudden sharp turn toward a person.", true},
      {"A car drives along the road.", false}};
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto v = verify_frame("v", i, corpus[i].first, &rules, llm);
      EXPECT_EQ(v.status, ParseStatus::ok);
      EXPECT_EQ(v.is_anomaly, corpus[i].second) << corpus[i].first;
      EXPECT_EQ(v.broken_rules.size(), corpus[i].second ? 1u : 0u);
    }
  // Without rules the mock only recognizes collisions.
  EXPECT_TRUE(verify_frame("v", 1, corpus[1].first, nullptr, llm).is_anomaly);
  EXPECT_FALSE(verify_frame("v", 2, corpus[2].first, nullptr, llm).is_anomaly);
}

TEST(Verify, RepairThenFailure) {
  RuleSet rules{"v", {"n"}, {"a"}, {}, ParseStatus::ok, ""};
  int n = 0;
  FunctionLlm flaky([&](const std::string&) { return std::string(++n == 1 ? "hmm" : "Anomaly: Yes\nBroken Rules:\n- a"); });
  const auto v = verify_frame("v", 3, "cap", &rules, flaky);
  EXPECT_EQ(v.status, ParseStatus::repaired);
  EXPECT_TRUE(v.is_anomaly);
  EXPECT_EQ(v.broken_rules, std::vector<std::string>{"a"});

  FunctionLlm bad([](const std::string&) { return std::string("hmm"); });
  const auto f = verify_frame("v", 3, "cap", &rules, bad);
  EXPECT_EQ(f.status, ParseStatus::failed);
  EXPECT_FALSE(f.error.empty());
  EXPECT_EQ(bad.calls(), 2u);

  FunctionLlm down([](const std::string&) -> std::string { throw TransportError("down"); });
  const auto d = verify_frame("v", 3, "cap", &rules, down, {.retry = {3, std::chrono::milliseconds(0)}});
  EXPECT_EQ(d.status, ParseStatus::failed);
  EXPECT_EQ(down.calls(), 3u);

  const json j = v;
  EXPECT_EQ(json(j.get<Verdict>()).dump(), j.dump());
}

TEST(Verify, PlaybackClient) {
  const std::string p = decision_prompt("cap", "rules");
  PlaybackLlm llm(std::vector<json>{json{{"prompt", p}, {"response", "Anomaly: No\nBroken Rules: None"}}});
  EXPECT_EQ(llm.complete(p, 10), "Anomaly: No\nBroken Rules: None");
  EXPECT_THROW(llm.complete("other", 10), TransportError);
}
