#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "httplib.h"
#include "pdjournal/errors.hpp"
#include "pdjournal/http_service.hpp"
#include "test_support.hpp"

using namespace pdj;
using namespace std::chrono_literals;

namespace {

struct SseEvent {
  std::uint64_t id = 0;
  std::string type;
  json data;
};

std::vector<SseEvent> parse_sse(const std::string& body) {
  std::vector<SseEvent> out;
  SseEvent cur;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (!cur.type.empty()) out.push_back(cur);
      cur = {};
    } else if (line.rfind("id: ", 0) == 0) {
      cur.id = std::stoull(line.substr(4));
    } else if (line.rfind("event: ", 0) == 0) {
      cur.type = line.substr(7);
    } else if (line.rfind("data: ", 0) == 0) {
      cur.data = json::parse(line.substr(6));
    }
  }
  return out;
}

class Service : public ::testing::Test {
protected:
  void start(llmgw::MockProvider::Options mock = {}, std::string token = "") {
    auto store = std::make_shared<journal::JournalStore>(dir_.path(), journal::JournalStore::Options{.sync = false});
    manager_ = std::make_shared<service::SessionManager>(store, service::make_engine(support::assets()),
                                                         support::mock(mock));
    service::ServiceConfig cfg;
    cfg.port = 0;
    cfg.heartbeat_ms = 100;
    cfg.bearer_token = token;
    http_ = std::make_unique<service::HttpService>(manager_, cfg);
    port_ = http_->bind();
    thread_ = std::thread([this] { http_->serve(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(10, 0);
    if (!token.empty()) client_->set_bearer_token_auth(cfg.bearer_token);
  }

  void TearDown() override {
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  std::string create_patient_and_session() {
    auto r = post("/v1/patients", to_json(support::sample_profile()));
    EXPECT_EQ(r->status, 201);
    auto s = post("/v1/sessions", {{"patient_id", "alex"}});
    EXPECT_EQ(s->status, 201);
    return json::parse(s->body)["session_id"];
  }

  support::TempDir dir_;
  std::shared_ptr<service::SessionManager> manager_;
  std::unique_ptr<service::HttpService> http_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST(HttpStatus, ErrorMapping) {
  EXPECT_EQ(service::http_status(Errc::UnknownPatient), 404);
  EXPECT_EQ(service::http_status(Errc::UnknownSession), 404);
  EXPECT_EQ(service::http_status(Errc::SessionClosed), 410);
  EXPECT_EQ(service::http_status(Errc::ConcurrentTurn), 409);
  EXPECT_EQ(service::http_status(Errc::InvalidArgument), 400);
}

TEST_F(Service, PatientLifecycle) {
  start();
  EXPECT_EQ(client_->Get("/healthz")->status, 200);
  auto created = post("/v1/patients", to_json(support::sample_profile()));
  ASSERT_EQ(created->status, 201);
  EXPECT_EQ(json::parse(created->body)["version"], 1);
  EXPECT_EQ(post("/v1/patients", to_json(support::sample_profile()))->status, 409);

  auto changed = to_json(support::sample_profile());
  changed["daily_activities"] = {"walking"};
  auto put = client_->Put("/v1/patients/alex/profile", changed.dump(), "application/json");
  ASSERT_EQ(put->status, 200);
  EXPECT_EQ(json::parse(put->body)["version"], 2);
  auto got = client_->Get("/v1/patients/alex/profile");
  EXPECT_EQ(json::parse(got->body)["daily_activities"], json({"walking"}));

  EXPECT_EQ(client_->Get("/v1/patients/nobody/profile")->status, 404);
  EXPECT_EQ(post("/v1/sessions", {{"patient_id", "nobody"}})->status, 404);
  EXPECT_EQ(client_->Post("/v1/patients", "not json", "application/json")->status, 400);
}

TEST_F(Service, ConversationOverHttp) {
  start();
  auto sid = create_patient_and_session();
  auto r = post("/v1/sessions/" + sid + "/messages", {{"text", "My hands are shaking"}});
  ASSERT_EQ(r->status, 200);
  auto body = json::parse(r->body);
  EXPECT_EQ(body["turn_id"], 1);
  EXPECT_EQ(body["intent"]["tag"], "symptom:tremor");
  EXPECT_EQ(body["replies"][1], "Alex, when did you last take your carbidopa-levodopa?");
  EXPECT_EQ(body["provenance"][0]["reply_index"], 1);
  EXPECT_EQ(body["provenance"][0]["provenance"], "personalized");

  auto journal = json::parse(client_->Get("/v1/patients/alex/journal")->body);
  EXPECT_EQ(journal.size(), 4u);  // greeting, report, acknowledgment, probe
  EXPECT_EQ(journal[1]["text"], "My hands are shaking");

  EXPECT_EQ(post("/v1/sessions/nope/messages", {{"text", "hi"}})->status, 404);
  EXPECT_EQ(post("/v1/sessions/" + sid + "/messages", {{"nottext", 1}})->status, 400);
}

TEST_F(Service, ClosedSessionIsGone) {
  start();
  auto sid = create_patient_and_session();
  post("/v1/sessions/" + sid + "/messages", {{"text", "We had pasta for dinner"}});
  auto bye = post("/v1/sessions/" + sid + "/messages", {{"text", "No"}});
  ASSERT_EQ(bye->status, 200);
  EXPECT_TRUE(json::parse(bye->body)["session_over"].get<bool>());
  EXPECT_EQ(post("/v1/sessions/" + sid + "/messages", {{"text", "hello"}})->status, 410);
}

TEST_F(Service, RestartOpensANewSession) {
  start();
  auto sid = create_patient_and_session();
  auto r = json::parse(post("/v1/sessions/" + sid + "/messages", {{"text", "restart"}})->body);
  EXPECT_TRUE(r["session_over"].get<bool>());
  ASSERT_TRUE(r.contains("next_session_id"));
  EXPECT_NE(r["next_session_id"], sid);
  EXPECT_EQ(r["next_greeting"], "Hi, Alex! Your journal is ready. What would you like to record?");
  EXPECT_EQ(post("/v1/sessions/" + r["next_session_id"].get<std::string>() + "/messages", {{"text", "I fell"}})->status,
            200);
}

TEST_F(Service, OverlappingTurnsAreRejected) {
  start({.delay_ms = 1000, .delay_personalization_only = true});
  auto sid = create_patient_and_session();
  auto slow = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(10, 0);
    return c.Post("/v1/sessions/" + sid + "/messages", R"({"text":"My hands are shaking"})", "application/json")->status;
  });
  std::this_thread::sleep_for(300ms);
  auto second = post("/v1/sessions/" + sid + "/messages", {{"text", "At noon"}});
  EXPECT_EQ(second->status, 409);
  EXPECT_EQ(json::parse(second->body)["error"], "ConcurrentTurn");
  EXPECT_EQ(slow.get(), 200);
}

TEST_F(Service, BearerTokenRequired) {
  start({}, "sekret");
  httplib::Client anon("127.0.0.1", port_);
  EXPECT_EQ(anon.Get("/healthz")->status, 200);
  EXPECT_EQ(anon.Get("/v1/patients/alex/profile")->status, 401);
  EXPECT_EQ(post("/v1/patients", to_json(support::sample_profile()))->status, 201);
}

TEST_F(Service, EventStreamPairsBusySignalsAndResumes) {
  start();
  auto sid = create_patient_and_session();
  for (const char* u : {"My hands are shaking", "I'm done", "No"}) {
    ASSERT_EQ(post("/v1/sessions/" + sid + "/messages", {{"text", u}})->status, 200);
  }
  auto all_res = client_->Get("/v1/sessions/" + sid + "/events");
  ASSERT_EQ(all_res->status, 200);
  EXPECT_EQ(all_res->get_header_value("Content-Type"), "text/event-stream");
  auto all = parse_sse(all_res->body);
  ASSERT_FALSE(all.empty());
  EXPECT_EQ(all.front().type, "reply");  // greeting
  EXPECT_EQ(all.back().type, "session_over");

  std::map<std::uint64_t, int> open;
  std::size_t busy_pairs = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].id, i + 1);
    if (all[i].type == "busy_start") {
      // At most one call in flight, and it finishes before the next starts.
      EXPECT_TRUE(open.empty());
      open[all[i].data["call_id"].get<std::uint64_t>()]++;
    } else if (all[i].type == "busy_stop") {
      auto id = all[i].data["call_id"].get<std::uint64_t>();
      ASSERT_EQ(open.count(id), 1u);
      open.erase(id);
      ++busy_pairs;
    } else if (all[i].type == "reply") {
      EXPECT_TRUE(open.empty()) << "reply delivered while the agent was busy";
    }
  }
  EXPECT_TRUE(open.empty());
  EXPECT_GT(busy_pairs, 0u);

  const auto resume_at = all[all.size() / 2].id;
  auto tail = parse_sse(client_->Get("/v1/sessions/" + sid + "/events", {{"Last-Event-ID", std::to_string(resume_at)}})->body);
  ASSERT_EQ(tail.size(), all.size() - resume_at);
  EXPECT_EQ(tail.front().id, resume_at + 1);
  EXPECT_EQ(client_->Get("/v1/sessions/nope/events")->status, 404);
}

TEST_F(Service, LiveStreamSeesNewEvents) {
  start();
  auto sid = create_patient_and_session();
  std::promise<std::string> got;
  std::thread reader([&] {
    httplib::Client c("127.0.0.1", port_);
    std::string buf;
    bool done = false;
    c.Get("/v1/sessions/" + sid + "/events", {{"Last-Event-ID", "1"}}, [&](const char* data, std::size_t n) {
      buf.append(data, n);
      if (!done && buf.find("event: reply") != std::string::npos) {
        done = true;
        got.set_value(buf);
        return false;
      }
      return true;
    });
    if (!done) got.set_value(buf);
  });
  std::this_thread::sleep_for(200ms);
  post("/v1/sessions/" + sid + "/messages", {{"text", "I fell in the garden"}});
  auto fut = got.get_future();
  ASSERT_EQ(fut.wait_for(5s), std::future_status::ready);
  auto events = parse_sse(fut.get());
  ASSERT_FALSE(events.empty());
  EXPECT_GT(events.front().id, 1u);
  reader.join();
}

TEST(SessionManagerDirect, ConcurrentStartsGetDistinctIds) {
  support::TempDir dir;
  auto store = std::make_shared<journal::JournalStore>(dir.path(), journal::JournalStore::Options{.sync = false});
  service::SessionManager m(store, service::make_engine(support::assets()), nullptr);
  m.put_profile(support::sample_profile());
  std::set<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.insert(m.start_session("alex").session_id);
  EXPECT_EQ(ids.size(), 50u);
  EXPECT_THROW(m.start_session("ghost"), Error);
  auto sid = *ids.begin();
  auto r = m.post_message(sid, "My hands are shaking");
  EXPECT_TRUE(r.provenance.empty());  // pattern-only without a gateway
  EXPECT_EQ(r.replies.back(), "When did you last take your carbidopa-levodopa?");
}
