// Command-line front end: simulation, metrics, golden checks, intent evaluation and the HTTP service.

#include <atomic>
#include <csignal>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "pdjournal/errors.hpp"
#include "pdjournal/evalharness.hpp"
#include "pdjournal/http_service.hpp"
#include "pdjournal/session.hpp"

namespace fs = std::filesystem;
using namespace pdj;

namespace {

constexpr std::int64_t kSimEpochMs = 1'700'000'000'000;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path.string());
  out << text;
}

std::vector<eval::SimLog> read_logs(const fs::path& path) {
  auto doc = read_json_file(path);
  std::vector<eval::SimLog> logs;
  if (doc.is_array()) {
    for (const auto& j : doc) logs.push_back(eval::simlog_from_json(j));
  } else {
    logs.push_back(eval::simlog_from_json(doc));
  }
  return logs;
}

std::shared_ptr<llmgw::Gateway> gateway_for(const std::string& provider, const fs::path& fixtures,
                                            const service::Assets& assets) {
  service::ServiceConfig cfg;
  cfg.provider = provider;
  cfg.fixtures_dir = fixtures;
  return service::make_gateway(cfg, assets);
}

struct SimArgs {
  std::vector<std::string> scripts;
  std::string out = "sim_logs.json";
  std::string data = default_data_dir();
  std::string store;
  std::string provider = "mock";
  std::string fixtures = "fixtures/llm";
  std::string confusions;
  std::string transcript;
  unsigned parallel = 1;
};

int run_sim(const SimArgs& a) {
  auto assets = service::Assets::load(a.data);
  auto gateway = gateway_for(a.provider, a.fixtures, assets);
  std::optional<eval::ConfusionTable> confusions;
  if (!a.confusions.empty()) confusions = eval::ConfusionTable::load(a.confusions);
  else if (fs::exists(fs::path(a.data) / "asr_confusions.json")) {
    confusions = eval::ConfusionTable::load(fs::path(a.data) / "asr_confusions.json");
  }

  std::vector<eval::PatientScript> scripts;
  for (const auto& s : a.scripts) {
    auto loaded = eval::load_scripts(s);
    scripts.insert(scripts.end(), loaded.begin(), loaded.end());
  }
  fs::path store_dir = a.store.empty() ? fs::temp_directory_path() / ("pdj-sim-" + std::to_string(::getpid())) : fs::path(a.store);
  journal::JournalStore store(store_dir, {.sync = false});

  // Each script gets its own simulated clock so results do not depend on scheduling.
  auto run_one = [&](const eval::PatientScript& script) {
    auto tick = std::make_shared<std::atomic<std::int64_t>>(kSimEpochMs);
    dialog::EngineOptions opts;
    opts.clock_ms = [tick] { return tick->fetch_add(1000); };
    auto engine = service::make_engine(assets, opts);
    eval::SimEnvironment env{engine.get(), gateway.get(), &store, confusions ? &*confusions : nullptr};
    return eval::simulate(script, env);
  };

  std::vector<eval::SimLog> logs(scripts.size());
  const unsigned workers = std::max(1u, a.parallel);
  for (std::size_t base = 0; base < scripts.size(); base += workers) {
    std::vector<std::future<eval::SimLog>> batch;
    for (std::size_t i = base; i < std::min(scripts.size(), base + workers); ++i) {
      batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run_one,
                                 std::cref(scripts[i])));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) logs[base + i] = batch[i].get();
  }

  json out = json::array();
  std::string transcript;
  for (const auto& log : logs) {
    out.push_back(eval::to_json(log));
    transcript += eval::render_transcript(log);
  }
  write_text(a.out, out.dump(2) + "\n");
  if (!a.transcript.empty()) write_text(a.transcript, transcript);
  std::cout << "simulated " << logs.size() << " patient(s) -> " << a.out << "\n";
  if (a.store.empty()) fs::remove_all(store_dir);
  return 0;
}

int run_metrics(const std::string& logs_path, const std::string& gold_path, bool as_json) {
  auto logs = read_logs(logs_path);
  auto gold = gold_path.empty() ? eval::gold_from_logs(logs) : eval::gold_from_json(read_json_file(gold_path));
  auto report = eval::compute_metrics(logs, gold);
  if (as_json) std::cout << eval::to_json(report).dump(2) << "\n";
  else std::cout << eval::render_table(report);
  return 0;
}

int run_golden(const std::string& transcript, const std::string& expected) {
  auto r = eval::golden_check(transcript, expected);
  if (r.pass) {
    std::cout << "golden: identical\n";
    return 0;
  }
  std::cout << "golden: differs at line " << r.line << "\n  expected: " << r.expected << "\n  actual:   " << r.actual
            << "\n";
  return 1;
}

int run_eval_intents(const std::string& corpus, const std::string& data, const std::string& provider,
                     double min_accuracy, bool as_json) {
  auto assets = service::Assets::load(data);
  auto gateway = gateway_for(provider, "fixtures/llm", assets);
  auto engine = service::make_engine(assets);
  auto report = eval::evaluate_intents(eval::load_intent_corpus(corpus), engine->classifier(), gateway.get());
  if (as_json) std::cout << eval::to_json(report).dump(2) << "\n";
  else std::cout << eval::render_table(report);
  return report.accuracy >= min_accuracy && report.exemplar_errors == 0 ? 0 : 1;
}

int run_worksheet(const std::string& logs_path, const std::string& out_dir) {
  for (const auto& log : read_logs(logs_path)) {
    auto path = fs::path(out_dir) / (log.patient + ".worksheet.json");
    write_text(path, eval::relevance_worksheet(log).dump(2) + "\n");
    std::cout << path.string() << "\n";
  }
  return 0;
}

int run_relevance(const std::string& sheet, const std::string& field) {
  auto rate = eval::relevance_rate(read_json_file(sheet), field);
  if (!rate) {
    std::cout << field << ": no coded rows\n";
    return 1;
  }
  std::cout << field << ": " << eval::round2(*rate) << "\n";
  return 0;
}

std::atomic<service::HttpService*> g_service{nullptr};

void on_signal(int) {
  if (auto* s = g_service.load()) std::thread([s] { s->stop(); }).detach();
}

int run_serve(const std::string& config_path, const std::string& data) {
  auto config = config_path.empty() ? service::ServiceConfig{} : service::ServiceConfig::load(config_path);
  auto assets = service::Assets::load(data);
  auto gateway = service::make_gateway(config, assets);
  nlu::LlmOptions llm;
  llm.deadline_ms = config.intent_deadline_ms;
  auto engine = service::make_engine(assets, {}, llm);
  auto store = std::make_shared<journal::JournalStore>(config.data_dir);
  auto sessions = std::make_shared<service::SessionManager>(store, engine, gateway);
  service::HttpService http(sessions, config);
  int port = http.bind();
  spdlog::info("listening on {}:{} (provider {})", config.host, port, config.provider);
  g_service = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  http.serve();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parkinson's symptom journal tooling"};
  app.require_subcommand(1);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("sim", "play patient scripts through the dialog pipeline");
  sim_cmd->add_option("scripts", sim.scripts, "script files")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim.out, "simulation log output");
  sim_cmd->add_option("--data", sim.data, "configuration directory");
  sim_cmd->add_option("--store", sim.store, "journal directory (temporary when omitted)");
  sim_cmd->add_option("--provider", sim.provider, "mock | replay | record | http | none");
  sim_cmd->add_option("--fixtures", sim.fixtures, "replay fixture directory");
  sim_cmd->add_option("--confusions", sim.confusions, "ASR confusion table");
  sim_cmd->add_option("--transcript", sim.transcript, "write the rendered transcript here");
  sim_cmd->add_option("--parallel", sim.parallel, "scripts simulated concurrently");

  std::string logs, gold;
  bool as_json = false;
  auto* metrics_cmd = app.add_subcommand("metrics", "intent accuracy and personalization rate");
  metrics_cmd->add_option("logs", logs, "simulation log")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--gold", gold, "gold labels (defaults to the labels carried in the log)");
  metrics_cmd->add_flag("--json", as_json, "print JSON instead of a table");

  std::string transcript, expected;
  auto* golden_cmd = app.add_subcommand("golden", "byte-exact transcript comparison");
  golden_cmd->add_option("transcript", transcript)->required();
  golden_cmd->add_option("expected", expected)->required();

  std::string corpus, data = default_data_dir(), provider = "mock";
  double min_accuracy = 0.95;
  auto* intents_cmd = app.add_subcommand("eval-intents", "score the intent classifier on a labelled corpus");
  intents_cmd->add_option("corpus", corpus)->required()->check(CLI::ExistingFile);
  intents_cmd->add_option("--data", data, "configuration directory");
  intents_cmd->add_option("--provider", provider, "mock | replay | http | none");
  intents_cmd->add_option("--min-accuracy", min_accuracy);
  intents_cmd->add_flag("--json", as_json, "print JSON instead of a table");

  std::string out_dir = ".";
  auto* sheet_cmd = app.add_subcommand("worksheet", "export relevance coding sheets");
  sheet_cmd->add_option("logs", logs)->required()->check(CLI::ExistingFile);
  sheet_cmd->add_option("--out", out_dir);

  std::string sheet, field = "system_relevant";
  auto* rel_cmd = app.add_subcommand("relevance", "relevance rate of a coded worksheet");
  rel_cmd->add_option("worksheet", sheet)->required()->check(CLI::ExistingFile);
  rel_cmd->add_option("--field", field)->check(CLI::IsMember({"system_relevant", "participant_relevant"}));

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP/SSE service");
  serve_cmd->add_option("--config", config_path, "server configuration");
  serve_cmd->add_option("--data", data, "configuration directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim_cmd) return run_sim(sim);
    if (*metrics_cmd) return run_metrics(logs, gold, as_json);
    if (*golden_cmd) return run_golden(transcript, expected);
    if (*intents_cmd) return run_eval_intents(corpus, data, provider, min_accuracy, as_json);
    if (*sheet_cmd) return run_worksheet(logs, out_dir);
    if (*rel_cmd) return run_relevance(sheet, field);
    if (*serve_cmd) return run_serve(config_path, data);
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
