#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "text_io.hpp"
#include "tdmoe/error.hpp"
#include "tdmoe/policies.hpp"

// Bundle layout:
//   tdmoe-policy 1
//   kind dmoe|teamdnn
//   agents K
//   experts N          (dmoe only)
//   p_max X
//   input_layout L
//   then per agent: "agent j", and either "expert e" + mlp block per expert
//   followed by "gating" + mlp block, or "net" + mlp block
//   end-policy

namespace tdmoe {
namespace {

constexpr const char* bundle_magic = "tdmoe-policy";
constexpr int bundle_version = 1;
constexpr const char* teamdnn_layout = "csi-row-major/1";

struct Header {
    std::string kind;
    std::size_t agents = 0;
    std::size_t experts = 0;
    double p_max = 0.0;
};

void write_header(std::ostream& os, const char* kind, std::size_t agents, std::size_t experts, double p_max,
                  const char* layout)
{
    os << bundle_magic << ' ' << bundle_version << '\n' << "kind " << kind << '\n' << "agents " << agents << '\n';
    if (experts > 0)
        os << "experts " << experts << '\n';
    os << "p_max ";
    detail::write_number(os, p_max);
    os << '\n' << "input_layout " << layout << '\n';
}

Header read_header(std::istream& is, std::string_view expected_kind, const char* layout)
{
    constexpr std::string_view ctx = "policy bundle";
    detail::expect_token(is, bundle_magic, ctx);
    int version = 0;
    require(static_cast<bool>(is >> version), ErrorCode::io, "policy bundle: missing version");
    require(version == bundle_version, ErrorCode::io,
            "policy bundle: unsupported version " + std::to_string(version));
    Header h;
    detail::expect_token(is, "kind", ctx);
    is >> h.kind;
    require(h.kind == expected_kind, ErrorCode::io,
            "policy bundle: expected kind '" + std::string(expected_kind) + "', got '" + h.kind + "'");
    detail::expect_token(is, "agents", ctx);
    h.agents = detail::read_count(is, "agent count", ctx);
    require(h.agents >= 1, ErrorCode::io, "policy bundle: agent count must be >= 1");
    if (h.kind == "dmoe") {
        detail::expect_token(is, "experts", ctx);
        h.experts = detail::read_count(is, "expert count", ctx);
        require(h.experts >= 1, ErrorCode::io, "policy bundle: expert count must be >= 1");
    }
    detail::expect_token(is, "p_max", ctx);
    h.p_max = detail::read_number(is, ctx);
    detail::expect_token(is, "input_layout", ctx);
    std::string got;
    is >> got;
    require(got == layout, ErrorCode::io, "policy bundle: unknown input layout '" + got + "'");
    return h;
}

void expect_index(std::istream& is, std::string_view tag, std::size_t index)
{
    detail::expect_token(is, tag, "policy bundle");
    const std::size_t got = detail::read_count(is, "index", "policy bundle");
    require(got == index, ErrorCode::io,
            "policy bundle: expected " + std::string(tag) + ' ' + std::to_string(index) + ", got " + std::to_string(got));
}

} // namespace

void write_policy_bundle(std::ostream& os, const DmoeTeam& team)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "cannot write an empty team");
    const DmoePolicy& first = team[0];
    for (const auto& m : team.members) {
        m.validate();
        require(m.n_experts() == first.n_experts() && m.p_max == first.p_max, ErrorCode::shape_mismatch,
                "team members disagree on expert count or p_max");
    }
    write_header(os, "dmoe", team.size(), first.n_experts(), first.p_max, expert_input_layout);
    for (std::size_t j = 0; j < team.size(); ++j) {
        os << "agent " << j << '\n';
        for (std::size_t e = 0; e < team[j].n_experts(); ++e) {
            os << "expert " << e << '\n';
            write_mlp(os, team[j].experts[e]);
        }
        os << "gating\n";
        write_mlp(os, team[j].gating);
    }
    os << "end-policy\n";
    require(static_cast<bool>(os), ErrorCode::io, "failed writing policy bundle");
}

DmoeTeam read_dmoe_bundle(std::istream& is)
{
    const Header h = read_header(is, "dmoe", expert_input_layout);
    DmoeTeam team;
    for (std::size_t j = 0; j < h.agents; ++j) {
        expect_index(is, "agent", j);
        DmoePolicy pol;
        pol.p_max = h.p_max;
        for (std::size_t e = 0; e < h.experts; ++e) {
            expect_index(is, "expert", e);
            pol.experts.push_back(read_mlp(is));
        }
        detail::expect_token(is, "gating", "policy bundle");
        pol.gating = read_mlp(is);
        try {
            pol.validate();
        } catch (const Error& err) {
            fail(ErrorCode::io, std::string("policy bundle: ") + err.what());
        }
        require(pol.agents() == h.agents, ErrorCode::io, "policy bundle: network width disagrees with agent count");
        team.members.push_back(std::move(pol));
    }
    detail::expect_token(is, "end-policy", "policy bundle");
    return team;
}

void write_policy_bundle(std::ostream& os, const TeamDnnTeam& team)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "cannot write an empty team");
    for (const auto& m : team.members) {
        m.validate();
        require(m.p_max == team[0].p_max, ErrorCode::shape_mismatch, "team members disagree on p_max");
    }
    write_header(os, "teamdnn", team.size(), 0, team[0].p_max, teamdnn_layout);
    for (std::size_t j = 0; j < team.size(); ++j) {
        os << "agent " << j << '\n' << "net\n";
        write_mlp(os, team[j].net);
    }
    os << "end-policy\n";
    require(static_cast<bool>(os), ErrorCode::io, "failed writing policy bundle");
}

TeamDnnTeam read_teamdnn_bundle(std::istream& is)
{
    const Header h = read_header(is, "teamdnn", teamdnn_layout);
    TeamDnnTeam team;
    for (std::size_t j = 0; j < h.agents; ++j) {
        expect_index(is, "agent", j);
        detail::expect_token(is, "net", "policy bundle");
        TeamDnnPolicy pol;
        pol.p_max = h.p_max;
        pol.net = read_mlp(is);
        try {
            pol.validate();
        } catch (const Error& err) {
            fail(ErrorCode::io, std::string("policy bundle: ") + err.what());
        }
        require(pol.net.input_width() == h.agents * h.agents, ErrorCode::io,
                "policy bundle: network width disagrees with agent count");
        team.members.push_back(std::move(pol));
    }
    detail::expect_token(is, "end-policy", "policy bundle");
    return team;
}

void save_policy_bundle(const std::filesystem::path& path, const DmoeTeam& team)
{
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorCode::io, "cannot open " + path.string() + " for writing");
    write_policy_bundle(os, team);
}

DmoeTeam load_dmoe_bundle(const std::filesystem::path& path)
{
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorCode::io, "cannot open " + path.string());
    return read_dmoe_bundle(is);
}

} // namespace tdmoe
