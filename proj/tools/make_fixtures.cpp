// Regenerates the bundled corpus and the replay fixture store.
//
//   make_fixtures <fixtures-dir>
//
// Writes corpus/train.json (example pool), corpus/test.json (gold), then
// records ner -> verify -> events through the real command-line entry point
// against a local scripted provider, leaving corpus/first_pass.json and the
// llm/ store behind.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "veille/align.hpp"
#include "veille/cli.hpp"
#include "veille/corpus.hpp"
#include "veille/promptkit.hpp"
#include "veille/xmltag.hpp"

namespace fs = std::filesystem;
using namespace veille;

namespace {

struct EventDef {
  std::vector<std::string> central;
  std::vector<std::string> associated;
};

struct Sample {
  std::string id;
  std::string annotated;
  std::vector<EventDef> events;
  std::string ner_reply;  // scripted first-pass output; empty means a faithful echo
  std::vector<EventDef> extra_events;  // invalid events the scripted model adds
};

// clang-format off
const std::vector<Sample> kTrain = {
    {"train-01",
     "<DOC_SOURCE>AFP</DOC_SOURCE> - Un foyer de <INF_DISEASE>grippe aviaire</INF_DISEASE> a été détecté dans un "
     "élevage des <LOCATION>Landes</LOCATION> le <ABS_DATE>12 janvier 2024</ABS_DATE>, selon le "
     "<ORGANIZATION>ministère de l’Agriculture</ORGANIZATION>.",
     {{{"grippe aviaire"}, {"Landes", "12 janvier 2024"}}}, "", {}},
    {"train-02",
     "Les autorités sanitaires de <LOCATION>Guadeloupe</LOCATION> signalent une hausse des cas de "
     "<INF_DISEASE>dengue</INF_DISEASE> <FUZZY_PERIOD>depuis plusieurs semaines</FUZZY_PERIOD>.",
     {{{"dengue"}, {"Guadeloupe", "depuis plusieurs semaines"}}}, "", {}},
    {"train-03",
     "<LOC_REF_TO_ORG>Paris</LOC_REF_TO_ORG> annonce le renforcement de la surveillance du "
     "<PATHOGEN>virus du Nil occidental</PATHOGEN> en <LOCATION>Camargue</LOCATION> <REL_PERIOD>cet été"
     "</REL_PERIOD>.",
     {{{"virus du Nil occidental"}, {"Camargue", "cet été"}}}, "", {}},
    {"train-04",
     "Les <PATHOGEN ent_id=\"P1\"><PATHOGEN ent_id=\"P2\">virus</PATHOGEN></PATHOGEN> de la "
     "<PATHOGEN ent_id=\"P1\">dengue</PATHOGEN> et du <PATHOGEN ent_id=\"P2\">chikungunya</PATHOGEN> circulent à "
     "<LOCATION>Mayotte</LOCATION> <REL_DATE>cette semaine</REL_DATE>.",
     {{{"virus … dengue", "virus … chikungunya"}, {"Mayotte", "cette semaine"}}}, "", {}},
    {"train-05",
     "Une fuite de <TOXIC_C_AGENT>chlore gazeux</TOXIC_C_AGENT> a intoxiqué douze ouvriers à "
     "<LOCATION>Rouen</LOCATION> <REL_DATE>mardi</REL_DATE>.",
     {{{"chlore gazeux"}, {"Rouen", "mardi"}}}, "", {}},
    {"train-06",
     "L’<ORGANIZATION>Organisation mondiale de la santé</ORGANIZATION> (<ORGANIZATION>OMS</ORGANIZATION>) a "
     "confirmé le <ABS_DATE>3 mars 2023</ABS_DATE> une épidémie de <INF_DISEASE>choléra</INF_DISEASE> au "
     "<LOCATION>Malawi</LOCATION>.",
     {{{"choléra"}, {"Malawi", "3 mars 2023"}}}, "", {}},
    {"train-07",
     "Du <RADIOISOTOPE>césium-137</RADIOISOTOPE> a été mesuré près de la <ORG_REF_TO_LOC>centrale nucléaire de "
     "Tchernobyl</ORG_REF_TO_LOC> en <ABS_PERIOD>avril 2022</ABS_PERIOD>.",
     {{{"césium-137"}, {"centrale nucléaire de Tchernobyl", "avril 2022"}}}, "", {}},
    {"train-08",
     "<DOC_DATE>15/02/2024</DOC_DATE> - Le <NON_INF_DISEASE>saturnisme</NON_INF_DISEASE> touche des enfants de "
     "<LOCATION>Seine-Saint-Denis</LOCATION>, rapporte <DOC_AUTHOR>Jeanne Martin</DOC_AUTHOR>.",
     {{{"saturnisme"}, {"Seine-Saint-Denis", "15/02/2024"}}}, "", {}},
};

const std::vector<Sample> kTest = {
    // typographic apostrophe in the source, straight one and a double space in
    // the reply, date missed by the first pass
    {"test-01",
     "Un cas de <INF_DISEASE>rougeole</INF_DISEASE> a été confirmé à <LOCATION>Lyon</LOCATION> le "
     "<ABS_DATE>8 janvier 2025</ABS_DATE> par l’<ORGANIZATION>Agence régionale de santé</ORGANIZATION>.",
     {{{"rougeole"}, {"Lyon", "8 janvier 2025"}}},
     "Un cas de <INF_DISEASE>rougeole</INF_DISEASE> a été  confirmé à <LOCATION>Lyon</LOCATION> le 8 janvier "
     "2025 par l'<ORGANIZATION>Agence régionale de santé</ORGANIZATION>.",
     {}},
    // first pass picks the wrong location label
    {"test-02",
     "Des traces de <BIO_TOXIN>ricine</BIO_TOXIN> ont été retrouvées dans un courrier adressé à la "
     "<LOC_REF_TO_ORG>Maison-Blanche</LOC_REF_TO_ORG> <REL_DATE>hier</REL_DATE>.",
     {{{"ricine"}, {"Maison-Blanche", "hier"}}},
     "Des traces de <BIO_TOXIN>ricine</BIO_TOXIN> ont été retrouvées dans un courrier adressé à la "
     "<LOCATION>Maison-Blanche</LOCATION> <REL_DATE>hier</REL_DATE>.",
     {}},
    // hallucinated mention; the event model also proposes an invalid event
    {"test-03",
     "La <INF_DISEASE>fièvre jaune</INF_DISEASE> progresse au <LOCATION>Brésil</LOCATION> : "
     "<ABS_PERIOD>janvier 2018</ABS_PERIOD> a vu des dizaines de décès, selon l’<ORGANIZATION>OMS</ORGANIZATION>.",
     {{{"fièvre jaune"}, {"Brésil", "janvier 2018"}}},
     "La <INF_DISEASE>fièvre jaune</INF_DISEASE> progresse au <LOCATION>Brésil</LOCATION> et en "
     "<LOCATION>Amazonie</LOCATION> : <ABS_PERIOD>janvier 2018</ABS_PERIOD> a vu des dizaines de décès, selon "
     "l’<ORGANIZATION>OMS</ORGANIZATION>.",
     {{{"OMS"}, {"Brésil"}}}},
    {"test-04",
     "Les <INF_DISEASE ent_id=\"D1\"><INF_DISEASE ent_id=\"D2\">hépatites</INF_DISEASE></INF_DISEASE> "
     "<INF_DISEASE ent_id=\"D1\">A</INF_DISEASE> et <INF_DISEASE ent_id=\"D2\">E</INF_DISEASE> sont en hausse en "
     "<LOCATION>Bretagne</LOCATION> <FUZZY_PERIOD>ces dernières années</FUZZY_PERIOD>.",
     {{{"hépatites … A"}, {"Bretagne", "ces dernières années"}}}, "", {}},
    // reply wrapped in a code fence; an event without a date is proposed
    {"test-05",
     "<DOC_SOURCE>Reuters</DOC_SOURCE> - Une explosion de <EXPLOSIVE>TNT</EXPLOSIVE> a fait trois blessés à "
     "<LOCATION>Marseille</LOCATION> <REL_DATE>lundi dernier</REL_DATE>.",
     {{{"TNT"}, {"Marseille", "lundi dernier"}}},
     "```xml\n<DOC_SOURCE>Reuters</DOC_SOURCE> - Une explosion de <EXPLOSIVE>TNT</EXPLOSIVE> a fait trois blessés "
     "à <LOCATION>Marseille</LOCATION> <REL_DATE>lundi dernier</REL_DATE>.\n```",
     {{{"TNT"}, {"Marseille"}}}},
    {"test-06",
     "Aucun nouveau cas n’a été signalé <REL_PERIOD>la semaine dernière</REL_PERIOD>.", {}, "", {}},
};
// clang-format on

std::string joined_surface(const Entity& e) {
  std::string s;
  for (std::size_t i = 0; i < e.surface.size(); ++i) s += (i ? " … " : "") + e.surface[i];
  return s;
}

Document build(const Sample& s) {
  const auto parsed = parse_annotated(s.annotated, {UnknownLabelPolicy::strict, false});
  auto anchored = anchor_entities(parsed.plain, parsed);
  if (!anchored.rejections.empty()) throw std::runtime_error(s.id + ": gold annotation does not anchor");
  Document d{s.id, parsed.plain, std::move(anchored.entities), {}};
  auto id_of = [&](const std::string& surface) {
    for (const auto& e : d.entities) {
      if (joined_surface(e) == surface) return e.id;
    }
    throw std::runtime_error(s.id + ": no entity '" + surface + "'");
  };
  for (const auto& def : s.events) {
    Event ev;
    for (const auto& c : def.central) ev.central.push_back(id_of(c));
    for (const auto& a : def.associated) ev.associated.push_back(id_of(a));
    d.events.push_back(std::move(ev));
  }
  if (auto v = validate_document(d); !v.empty()) throw std::runtime_error(describe(v.front()));
  return d;
}

/// Events JSON with IDs taken from the entity list the prompt shows.
std::string scripted_events(const Sample& s, const std::string& prompt) {
  std::map<std::string, std::string> id_by_surface;
  std::istringstream lines(prompt.substr(prompt.find("ENTITIES (ID")));
  for (std::string line; std::getline(lines, line);) {
    const auto a = line.find(" | ");
    const auto b = line.rfind(" | ");
    if (a == std::string::npos || a == b) continue;
    id_by_surface.emplace(line.substr(a + 3, b - a - 3), line.substr(0, a));
  }
  std::vector<Event> out;
  auto add = [&](const EventDef& def) {
    Event ev;
    for (const auto& c : def.central) {
      if (id_by_surface.count(c)) ev.central.push_back(id_by_surface[c]);
    }
    for (const auto& a : def.associated) {
      if (id_by_surface.count(a)) ev.associated.push_back(id_by_surface[a]);
    }
    out.push_back(std::move(ev));
  };
  for (const auto& e : s.extra_events) add(e);
  for (const auto& e : s.events) add(e);
  return events_to_json(out).dump(2);
}

std::string reply(const nlohmann::json& body, const std::vector<std::pair<Sample, Document>>& docs) {
  const auto& msgs = body.at("messages");
  const std::string system = msgs.front().at("content");
  const std::string user = msgs.back().at("content");
  static const auto templates = TemplateSet::defaults();
  for (const auto& [sample, gold] : docs) {
    if (system == templates.get("ner").system_body && user == gold.text) {
      return sample.ner_reply.empty() ? render_inline_xml(gold) : sample.ner_reply;
    }
    if (system == templates.get("verify").system_body &&
        parse_annotated(user, {UnknownLabelPolicy::drop, true}).plain == gold.text) {
      Document entities_only = gold;
      entities_only.events.clear();
      return render_inline_xml(entities_only);
    }
    if (system == templates.get("events").system_body && user.rfind(gold.text + "\n\nENTITIES", 0) == 0) {
      return scripted_events(sample, user);
    }
  }
  throw std::runtime_error("scripted provider: unrecognized request");
}

void write_file(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

std::uint64_t approx_tokens(const std::string& s) { return s.size() / 4 + 1; }

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <fixtures-dir>\n";
    return 2;
  }
  const fs::path root = fs::absolute(argv[1]);
  Corpus train;
  Corpus test;
  std::vector<std::pair<Sample, Document>> scripted;
  for (const auto& s : kTrain) train.documents.push_back(build(s));
  for (const auto& s : kTest) {
    test.documents.push_back(build(s));
    scripted.emplace_back(s, test.documents.back());
  }
  write_file(root / "corpus" / "train.json", dump_corpus(train));
  write_file(root / "corpus" / "test.json", dump_corpus(test));

  httplib::Server srv;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      const std::string content = reply(body, scripted);
      std::uint64_t in = 0;
      for (const auto& m : body.at("messages")) in += approx_tokens(m.at("content").get<std::string>());
      const nlohmann::json payload = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
          {"usage", {{"prompt_tokens", in}, {"completion_tokens", approx_tokens(content)}}}};
      res.set_content(payload.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread server([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("EXTRACT_ENDPOINT", ("http://127.0.0.1:" + std::to_string(port) + "/v1").c_str(), 1);
  ::setenv("EXTRACT_API_KEY", "fixture-recording", 1);
  fs::remove_all(root / "llm");
  const fs::path work = fs::temp_directory_path() / "veille-make-fixtures";
  fs::remove_all(work);
  const std::string config = (root / "veille.toml").string();

  int code = 0;
  auto step = [&](std::vector<std::string> args) {
    if (code != 0) return;
    args.insert(args.end(), {"--config", config, "--mode", "record"});
    code = execute(args, std::cout, std::cerr);
  };
  step({"ner", "--input", (root / "corpus" / "test.json").string(), "--out", (work / "ner.json").string()});
  step({"verify", "--input", (work / "ner.json").string(), "--out", (work / "verified.json").string()});
  step({"events", "--entities", (work / "verified.json").string(), "--out", (work / "events.json").string()});
  srv.stop();
  server.join();
  if (code == 0) fs::copy_file(work / "ner.json", root / "corpus" / "first_pass.json", fs::copy_options::overwrite_existing);
  fs::remove_all(work);
  return code;
}
