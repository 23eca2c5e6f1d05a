#include <random>

#include <gtest/gtest.h>

#include "support/fakes.hpp"
#include "support/generators.hpp"
#include "veille/pipelines.hpp"

using namespace veille;

namespace {

// "Cas de grippe à Lyon le 3 mars." with one disease, one location, one date.
Document outbreak() {
  return {"o1",
          "Cas de grippe à Lyon le 3 mars.",
          {{"T1", EntityLabel::INF_DISEASE, {{7, 13}}, {"grippe"}},
           {"T2", EntityLabel::LOCATION, {{16, 20}}, {"Lyon"}},
           {"T3", EntityLabel::REL_DATE, {{24, 30}}, {"3 mars"}}},
          {}};
}

std::string events_json(const std::vector<Event>& evs) { return events_to_json(evs).dump(); }

struct Rig {
  explicit Rig(fakes::ScriptedClient::Handler h, Corpus pool_docs = {})
      : dir(fakes::temp_dir("pipe")),
        client(std::make_shared<fakes::ScriptedClient>(std::move(h))),
        pool(std::move(pool_docs)),
        index(pool, std::make_shared<HashedTrigramEmbedder>()),
        templates(TemplateSet::defaults()) {
    GatewayConfig gc;
    gc.mode = GatewayMode::live;
    gc.endpoint = "http://provider.test/v1";
    gc.fixtures = dir;
    gateway = std::make_unique<Gateway>(gc, client);
    cfg.fewshot.k = 2;
  }
  ~Rig() { std::filesystem::remove_all(dir); }

  std::filesystem::path dir;
  std::shared_ptr<fakes::ScriptedClient> client;
  Corpus pool;
  ExampleIndex index;
  TemplateSet templates;
  RunConfig cfg;
  std::unique_ptr<Gateway> gateway;
};

}  // namespace

TEST(Ner, EchoOfGoldRecoversGold) {
  std::mt19937 rng(21);
  Corpus gold;
  for (int i = 0; i < 30; ++i) gold.documents.push_back(testgen::random_document(rng, "g" + std::to_string(i)));
  fakes::ByDocument by_doc;
  for (const auto& d : gold.documents) by_doc.add(d.text, render_inline_xml(d));
  Rig rig(by_doc, gold);
  rig.cfg.jobs = 4;
  auto rep = run_ner_corpus(gold, rig.index, rig.cfg, rig.templates, *rig.gateway);
  ASSERT_EQ(rep.output.documents.size(), gold.documents.size());
  for (std::size_t i = 0; i < gold.documents.size(); ++i) {
    EXPECT_EQ(rep.output.documents[i].entities, gold.documents[i].entities) << gold.documents[i].id;
    EXPECT_TRUE(rep.documents[i].rejections.empty());
  }
  EXPECT_EQ(rep.usage.stages.at("ner").requests, 30u);
}

TEST(Ner, PromptCarriesExamplesAndFencesAreStripped) {
  const Document d = outbreak();
  Corpus pool{{Document{"p1", "Cas de dengue à Nice.", {{"T1", EntityLabel::INF_DISEASE, {{7, 13}}, {"dengue"}}}, {}}}};
  std::size_t seen_messages = 0;
  Rig rig(
      [&](const nlohmann::json& body) {
        seen_messages = body["messages"].size();
        return HttpResponse{200, fakes::chat_payload("```xml\n" + render_inline_xml(d) + "\n```")};
      },
      pool);
  auto r = run_ner(d, rig.index, rig.cfg, rig.templates, *rig.gateway);
  EXPECT_EQ(seen_messages, 4u);  // one example available
  EXPECT_EQ(r.entities, d.entities);
}

TEST(Ner, PerturbedEchoStillAnchors) {
  const Document d = outbreak();
  Rig rig([](const nlohmann::json&) {
    return HttpResponse{200, fakes::chat_payload("Cas  de <INF_DISEASE>grippe</INF_DISEASE> a <LOCATION>Lyon</LOCATION> "
                                                 "le <REL_DATE>3 mars</REL_DATE>")};
  });
  auto r = run_ner(d, rig.index, rig.cfg, rig.templates, *rig.gateway);
  EXPECT_EQ(r.entities, d.entities);
  EXPECT_TRUE(r.rejections.empty());
}

TEST(Ner, HallucinatedMentionRejected) {
  const Document d = outbreak();
  Rig rig([](const nlohmann::json&) {
    return HttpResponse{200, fakes::chat_payload("Cas de <INF_DISEASE>grippe</INF_DISEASE> à <LOCATION>Marseille</LOCATION> "
                                                 "le 3 mars.")};
  });
  auto r = run_ner(d, rig.index, rig.cfg, rig.templates, *rig.gateway);
  ASSERT_EQ(r.entities.size(), 1u);
  EXPECT_EQ(r.entities[0].surface[0], "grippe");
  ASSERT_EQ(r.rejections.size(), 1u);
  EXPECT_EQ(r.rejections[0].label, EntityLabel::LOCATION);
}

TEST(Ner, BrokenMarkupIsWarningWhenLenient) {
  RunConfig cfg;
  auto r = anchor_completion("Cas de grippe.", "Cas de <LOCATION>grippe</INF_DISEASE>.", cfg);
  EXPECT_FALSE(r.warnings.empty());
  for (const auto& e : r.entities) EXPECT_TRUE(validate_document({"d", "Cas de grippe.", {e}, {}}).empty());
  cfg.parse.lenient = false;
  EXPECT_THROW(anchor_completion("Cas de grippe.", "Cas de <INF_DISEASE>grippe.", cfg), MarkupError);
}

TEST(Verify, IdentityGivesEmptyDiff) {
  const Document d = outbreak();
  Rig rig([&](const nlohmann::json& body) {
    return HttpResponse{200, fakes::chat_payload(fakes::last_user_message(body))};
  });
  auto r = run_verify_merge(d, d.entities, rig.cfg, rig.templates, *rig.gateway);
  EXPECT_EQ(r.entities, d.entities);
  EXPECT_TRUE(r.diff.empty());
}

TEST(Verify, AddsMissedDateAndRelabels) {
  Document d = outbreak();
  std::vector<Entity> first = {d.entities[0], d.entities[1]};
  Rig rig([](const nlohmann::json&) {
    return HttpResponse{200, fakes::chat_payload("Cas de <INF_DISEASE>grippe</INF_DISEASE> à <LOC_REF_TO_ORG>Lyon"
                                                 "</LOC_REF_TO_ORG> le <ABS_DATE>3 mars</ABS_DATE>.")};
  });
  auto r = run_verify_merge(d, first, rig.cfg, rig.templates, *rig.gateway);
  ASSERT_EQ(r.entities.size(), 3u);
  EXPECT_EQ(r.entities[1].id, "T2");
  EXPECT_EQ(r.entities[1].label, EntityLabel::LOC_REF_TO_ORG);
  ASSERT_EQ(r.diff.added.size(), 1u);
  EXPECT_EQ(r.diff.added[0].label, EntityLabel::ABS_DATE);
  EXPECT_EQ(r.diff.added[0].id, "V1");
  ASSERT_EQ(r.diff.relabeled.size(), 1u);
  EXPECT_EQ(r.diff.relabeled[0].from, EntityLabel::LOCATION);
  EXPECT_EQ(r.diff.relabeled[0].to, EntityLabel::LOC_REF_TO_ORG);
  EXPECT_TRUE(r.diff.dropped.empty());
}

TEST(Verify, AuthoritativePolicyDrops) {
  const Document d = outbreak();
  auto [merged, diff] = merge_entities(d.entities, {d.entities[0]}, MergePolicy::verifier_authoritative);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].id, "T1");
  EXPECT_EQ(diff.dropped.size(), 2u);
  auto [u, udiff] = merge_entities(d.entities, {d.entities[0]}, MergePolicy::union_merge);
  EXPECT_EQ(u, d.entities);
  EXPECT_TRUE(udiff.empty());
}

TEST(Verify, InvalidFirstPassIsCorpusError) {
  Document d = outbreak();
  auto bad = d.entities;
  bad[0].surface[0] = "rougeole";
  Rig rig([](const nlohmann::json&) { return HttpResponse{200, fakes::chat_payload("x")}; });
  EXPECT_THROW(run_verify_merge(d, bad, rig.cfg, rig.templates, *rig.gateway), CorpusError);
  EXPECT_EQ(rig.client->calls, 0);
}

TEST(Events, SingleEventFromModel) {
  const Document d = outbreak();
  Rig rig([](const nlohmann::json&) {
    return HttpResponse{200, fakes::chat_payload(events_json({{{"T1"}, {"T2", "T3"}}}))};
  });
  auto r = run_events(d, d.entities, rig.index, rig.cfg, rig.templates, *rig.gateway);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0], (Event{{"T1"}, {"T2", "T3"}}));
  EXPECT_TRUE(r.violations.empty());
}

TEST(Events, NoEntitiesNoCall) {
  Rig rig([](const nlohmann::json&) { return HttpResponse{200, fakes::chat_payload("[]")}; });
  Document d{"e", "Rien à signaler.", {}, {}};
  auto r = run_events(d, {}, rig.index, rig.cfg, rig.templates, *rig.gateway);
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(rig.client->calls, 0);
}

TEST(Events, ElevenEventsKeepTen) {
  std::string body;
  Document d;
  d.id = "many";
  std::vector<Event> evs;
  for (int i = 0; i < 11; ++i) {
    auto add = [&](EntityLabel l, const std::string& s) {
      const auto start = text::length(body);
      body += s;
      const std::string id = "T" + std::to_string(d.entities.size() + 1);
      d.entities.push_back({id, l, {{start, start + text::length(s)}}, {s}});
      body += " ";
      return id;
    };
    Event ev;
    ev.central.push_back(add(EntityLabel::INF_DISEASE, "grippe"));
    ev.associated.push_back(add(EntityLabel::LOCATION, "Lyon"));
    ev.associated.push_back(add(EntityLabel::ABS_DATE, "3 mars 2024"));
    evs.push_back(ev);
  }
  d.text = body;
  ASSERT_TRUE(validate_document(d).empty());
  Rig rig([&](const nlohmann::json&) { return HttpResponse{200, fakes::chat_payload(events_json(evs))}; });
  auto r = run_events(d, d.entities, rig.index, rig.cfg, rig.templates, *rig.gateway);
  ASSERT_EQ(r.events.size(), 10u);
  EXPECT_EQ(r.events.front(), evs.front());
  EXPECT_EQ(r.events.back(), evs[9]);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].rule, rule::kEventLimit);
}

TEST(Events, GarbageOutputIsWarning) {
  const Document d = outbreak();
  Rig rig([](const nlohmann::json&) { return HttpResponse{200, fakes::chat_payload("I could not find events.")}; });
  auto r = run_events(d, d.entities, rig.index, rig.cfg, rig.templates, *rig.gateway);
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(ParseEvents, AcceptsWrapperAndFenceDropsUnknownIds) {
  const auto ents = outbreak().entities;
  std::vector<std::string> warnings;
  auto evs = parse_event_output(
      "```json\n{\"events\": [[{\"attribute\":\"evt:central_element\",\"occurrences\":[\"T1\",\"T1\",\"T9\"]},"
      "{\"attribute\":\"evt:associated_element\",\"occurrences\":[\"T2\",\"T3\"]}]]}\n```",
      ents, &warnings);
  ASSERT_EQ(evs.size(), 1u);
  EXPECT_EQ(evs[0], (Event{{"T1"}, {"T2", "T3"}}));
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_THROW(parse_event_output("[[{\"attribute\":\"evt:cause\",\"occurrences\":[]}]]", ents), EventParseError);
  EXPECT_THROW(parse_event_output("{", ents), EventParseError);
  EXPECT_THROW(parse_event_output("{\"x\":1}", ents), EventParseError);
}

TEST(Repair, EachRuleDetected) {
  const auto ents = outbreak().entities;
  EventPolicy pol;
  auto rules = [&](std::vector<Event> c) {
    auto r = validate_and_repair(c, ents, pol, "o1");
    std::vector<std::string> out;
    for (const auto& v : r.violations) out.push_back(v.rule);
    return std::make_pair(r.events.size(), out);
  };
  using V = std::vector<std::string>;
  EXPECT_EQ(rules({{{"T1"}, {"T2", "T3"}}}), std::make_pair(std::size_t{1}, V{}));
  EXPECT_EQ(rules({{{"T2"}, {"T3"}}}).second, (V{"invalid central label", "invalid central label"}));
  EXPECT_EQ(rules({{{}, {"T2", "T3"}}}).second, (V{"missing central"}));
  EXPECT_EQ(rules({{{"T1"}, {"T3"}}}).second, (V{"missing location"}));
  EXPECT_EQ(rules({{{"T1"}, {"T2"}}}).second, (V{"missing date"}));
  auto reuse = rules({{{"T1"}, {"T2", "T3"}}, {{"T1"}, {"T2", "T3"}}});
  EXPECT_EQ(reuse.first, 1u);
  EXPECT_EQ(reuse.second[0], "ID reuse");
  EXPECT_EQ(rules({{{"T1"}, {"T1", "T2", "T3"}}}).second, (V{"ID reuse"}));
}

TEST(Repair, MixedCentralLabelsKeepFirst) {
  auto ents = outbreak().entities;
  ents.push_back({"T4", EntityLabel::PATHOGEN, {{0, 3}}, {"Cas"}});
  auto r = validate_and_repair({{{"T1", "T4"}, {"T2", "T3"}}}, ents, {}, "o1");
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].central, (std::vector<std::string>{"T1"}));
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].rule, rule::kMultipleCentral);
}

TEST(Repair, DocDateWarning) {
  auto ents = outbreak().entities;
  ents.push_back({"T4", EntityLabel::DOC_DATE, {{0, 3}}, {"Cas"}});
  auto r = validate_and_repair({{{"T1"}, {"T2", "T4"}}}, ents, {}, "o1");
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Report, SidecarShape) {
  RunReport rep;
  rep.stage = "ner";
  rep.documents.push_back({"d", {{EntityLabel::LOCATION, {"Lyon"}, "absent"}}, {}, {"w"}, std::nullopt});
  auto j = report_json(rep);
  EXPECT_EQ(j["stage"], "ner");
  EXPECT_EQ(j["documents"][0]["rejections"][0]["label"], "LOCATION");
  EXPECT_FALSE(j["documents"][0].contains("diff"));
  EXPECT_TRUE(j.contains("usage"));
}
