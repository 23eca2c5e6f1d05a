#include <cmath>
#include <map>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "support/fakes.hpp"
#include "support/oracles.hpp"
#include "veille/fewshot.hpp"
#include "veille/promptkit.hpp"

using namespace veille;

namespace {

/// Embeds texts from a lookup table; counts calls.
class TableEmbedder final : public EmbeddingProvider {
public:
  std::map<std::string, EmbeddingVector> table;
  int calls = 0;
  std::string name() const override { return "table"; }
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    ++calls;
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back(table.at(t));
    return out;
  }
};

double plain_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Document annotated_seed() {
  return {"s1",
          "Cas de grippe à Lyon le 3 mars.",
          {{"T1", EntityLabel::INF_DISEASE, {{7, 13}}, {"grippe"}},
           {"T2", EntityLabel::LOCATION, {{16, 20}}, {"Lyon"}},
           {"T3", EntityLabel::REL_DATE, {{24, 30}}, {"3 mars"}}},
          {}};
}

}  // namespace

TEST(Cosine, ReferenceValues) {
  EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{2, 0}}), 1.0);
  EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{0, 3}}), 0.0);
  EXPECT_NEAR(cosine({{1, 0}}, {{1, 1}}), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(cosine({{0, 0}}, {{1, 1}}), 0.0);
  EXPECT_THROW(cosine({{1, 0}}, {{1, 0, 0}}), ValidationError);
}

TEST(Cosine, ScaleInvariant) {
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    EmbeddingVector a{std::vector<double>(8)}, b{std::vector<double>(8)};
    for (auto& x : a.values) x = g(rng);
    for (auto& x : b.values) x = g(rng);
    EmbeddingVector a3 = a;
    for (auto& x : a3.values) x *= 3.5;
    EXPECT_NEAR(cosine(a, b), cosine(a3, b), 1e-12);
  }
}

TEST(HashedTrigram, DeterministicAndNormalized) {
  auto a = HashedTrigramEmbedder::embed_one("Épidémie de grippe à Paris");
  auto b = HashedTrigramEmbedder::embed_one("Épidémie de grippe à Paris");
  EXPECT_EQ(a, b);
  double n = 0;
  for (double x : a.values) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  auto empty = HashedTrigramEmbedder::embed_one("");
  for (double x : empty.values) EXPECT_EQ(x, 0.0);
  EXPECT_GT(cosine(a, HashedTrigramEmbedder::embed_one("épidémie de grippe à paris")), 0.999);
}

TEST(Select, KZeroAndLargeK) {
  Corpus pool{{{"a", "grippe à Lyon", {}, {}}, {"b", "dengue au Brésil", {}, {}}}};
  ExampleIndex idx(pool, std::make_shared<HashedTrigramEmbedder>());
  EXPECT_TRUE(idx.select("grippe", std::nullopt, 0).empty());
  EXPECT_EQ(idx.select("grippe", std::nullopt, 10).size(), 2u);
  auto self = idx.select("grippe à Lyon", std::string_view("a"), 10);
  ASSERT_EQ(self.size(), 1u);
  EXPECT_EQ(self[0].document->id, "b");
  EXPECT_EQ(idx.select("grippe à Lyon", std::string_view("a"), 10, false).front().document->id, "a");
}

// Exact order against selection-sort top-k, with many exact ties.
TEST(Select, MatchesBruteForceTopK) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    auto emb = std::make_shared<TableEmbedder>();
    Corpus pool;
    const std::size_t n = 1 + rng() % 25;
    const std::size_t dim = 1 + rng() % 4;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      std::string id = "doc" + std::to_string(rng() % 1000);
      while (std::find(ids.begin(), ids.end(), id) != ids.end()) id += "x";
      ids.push_back(id);
      const std::string text = "text " + id;
      EmbeddingVector v{std::vector<double>(dim)};
      for (auto& x : v.values) x = static_cast<double>(static_cast<int>(rng() % 5) - 2);
      emb->table[text] = v;
      pool.documents.push_back({id, text, {}, {}});
    }
    EmbeddingVector q{std::vector<double>(dim)};
    for (auto& x : q.values) x = static_cast<double>(static_cast<int>(rng() % 5) - 2);
    emb->table["query"] = q;
    const std::size_t k = trial % 3 == 0 ? 10 : rng() % (n + 3);

    ExampleIndex idx(pool, emb);
    auto got = idx.select("query", std::nullopt, k);
    std::vector<double> scores;
    for (const auto& d : pool.documents) scores.push_back(plain_cosine(q.values, emb->table[d.text].values));
    auto want = oracle::top_k(scores, ids, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_EQ(got[i].document->id, ids[want[i]]) << trial;
  }
}

TEST(CachedEmbedder, SecondCallHitsDisk) {
  const auto dir = fakes::temp_dir("emb");
  auto inner = std::make_shared<TableEmbedder>();
  inner->table["a"] = {{1, 2}};
  inner->table["b"] = {{3, 4}};
  CachedEmbedder cache(inner, dir);
  auto first = cache.embed({"a", "b"});
  EXPECT_EQ(inner->calls, 1);
  auto second = cache.embed({"b", "a"});
  EXPECT_EQ(inner->calls, 1);
  EXPECT_EQ(second[0], first[1]);
  EXPECT_EQ(second[1], first[0]);
  std::filesystem::remove_all(dir);
}

TEST(RemoteEmbedder, ParsesIndexedPayload) {
  auto client = std::make_shared<fakes::ScriptedClient>([](const nlohmann::json& body) {
    EXPECT_EQ(body.at("model"), "m");
    return HttpResponse{200, R"({"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]})"};
  });
  RemoteEmbedder r(client, "http://x/v1/", "m", "key");
  auto v = r.embed({"p", "q"});
  EXPECT_EQ(v[0].values, (std::vector<double>{1, 0}));
  EXPECT_EQ(client->last_url, "http://x/v1/embeddings");
  auto bad = std::make_shared<fakes::ScriptedClient>([](const nlohmann::json&) {
    return HttpResponse{200, R"({"data":[{"embedding":[0,1]},{"embedding":[1]}]})"};
  });
  EXPECT_THROW(RemoteEmbedder(bad, "http://x", "m", "").embed({"p", "q"}), ValidationError);
}

TEST(Fill, SinglePassNoRescan) {
  EXPECT_EQ(fill("{a}-{b}-{c}", {{"a", "{b}"}, {"b", "2"}}), "{b}-2-{c}");
  EXPECT_EQ(fill("{", {}), "{");
}

TEST(Templates, DefaultsPresentAndParsed) {
  auto t = TemplateSet::defaults();
  for (auto n : {"ner", "events", "verify", "augment"}) EXPECT_TRUE(t.contains(n)) << n;
  EXPECT_NE(t.get("ner").system_body.find("You are an expert French medical annotator."), std::string::npos);
  EXPECT_NE(t.get("ner").system_body.find("LABEL GLOSSARY"), std::string::npos);
  EXPECT_NE(t.get("events").system_body.find("You are an epidemiology analyst."), std::string::npos);
  EXPECT_NE(t.get("events").system_body.find("EVENT LIMIT"), std::string::npos);
  EXPECT_NE(t.get("verify").system_body.find("review, correct, and complete"), std::string::npos);
  EXPECT_THROW(t.get("nope"), TemplateError);
}

TEST(Templates, MissingPlaceholderIsTemplateError) {
  PromptTemplate t{"x", "sys", "no placeholder", "{annotated}"};
  EXPECT_THROW(build_ner_messages(t, {}, "in"), TemplateError);
  EXPECT_THROW(parse_template("system = 'a'", "broken"), TemplateError);
  EXPECT_THROW(parse_template("system = ", "broken"), TemplateError);
}

TEST(Templates, DirectoryOverridesByStem) {
  const auto dir = fakes::temp_dir("tpl");
  {
    std::ofstream(dir / "ner.toml") << "system = 'custom'\nuser = '<<{input}>>'\nassistant = '{annotated}'\n";
  }
  auto set = TemplateSet::load(dir);
  auto msgs = build_ner_messages(set.get("ner"), {}, "abc");
  EXPECT_EQ(msgs[0].content, "custom");
  EXPECT_EQ(msgs[1].content, "<<abc>>");
  EXPECT_TRUE(set.contains("events"));
  EXPECT_THROW(TemplateSet::load(dir / "missing"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Messages, NerCountAndAlternation) {
  auto t = TemplateSet::defaults().get("ner");
  for (std::size_t k : {0u, 1u, 3u, 5u, 10u}) {
    std::vector<NerExample> ex(k, {"src", "<LOCATION>src</LOCATION>"});
    auto msgs = build_ner_messages(t, ex, "input text");
    ASSERT_EQ(msgs.size(), 2 * k + 2);
    EXPECT_EQ(msgs.front().role, Role::system);
    for (std::size_t i = 1; i < msgs.size(); ++i) EXPECT_EQ(msgs[i].role, i % 2 ? Role::user : Role::assistant);
    EXPECT_EQ(msgs.back().content, "input text");
  }
}

TEST(Messages, EventsRenderEntitiesAndJson) {
  auto t = TemplateSet::defaults().get("events");
  const Document d = annotated_seed();
  EventExample ex{d.text, d.entities, {{{"T1"}, {"T2", "T3"}}}};
  auto msgs = build_event_messages(t, {ex}, d.text, d.entities);
  ASSERT_EQ(msgs.size(), 4u);
  EXPECT_NE(msgs[1].content.find("T2 | Lyon | LOCATION"), std::string::npos);
  auto j = nlohmann::json::parse(msgs[2].content);
  EXPECT_EQ(j[0][0]["attribute"], "evt:central_element");
  EXPECT_EQ(j[0][1]["occurrences"], (nlohmann::json{"T2", "T3"}));
  EXPECT_EQ(render_entity_list({}), "(none)");
}

TEST(Messages, AugmentDiffersOnlyInIndex) {
  auto t = TemplateSet::defaults().get("augment");
  auto a = build_augment_messages(t, annotated_seed(), 1);
  auto b = build_augment_messages(t, annotated_seed(), 2);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_NE(a[1], b[1]);
  std::string a1 = a[1].content, b1 = b[1].content;
  a1.replace(a1.find("variant 1"), 9, "variant #");
  b1.replace(b1.find("variant 2"), 9, "variant #");
  EXPECT_EQ(a1, b1);
  EXPECT_NE(a[1].content.find("- INF_DISEASE\n- LOCATION\n- REL_DATE"), std::string::npos);
  Document empty{"e", "rien", {}, {}};
  EXPECT_THROW(build_augment_messages(t, empty, 1), ValidationError);
}
