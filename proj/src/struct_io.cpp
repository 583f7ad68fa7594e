#include "polyfold/struct_io.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "polyfold/errors.hpp"

namespace polyfold {

namespace {

const std::map<std::string, char>& aa_table() {
    static const std::map<std::string, char> t = {
        {"ALA", 'A'}, {"ARG", 'R'}, {"ASN", 'N'}, {"ASP", 'D'}, {"CYS", 'C'},
        {"GLN", 'Q'}, {"GLU", 'E'}, {"GLY", 'G'}, {"HIS", 'H'}, {"ILE", 'I'},
        {"LEU", 'L'}, {"LYS", 'K'}, {"MET", 'M'}, {"PHE", 'F'}, {"PRO", 'P'},
        {"SER", 'S'}, {"THR", 'T'}, {"TRP", 'W'}, {"TYR", 'Y'}, {"VAL", 'V'},
    };
    return t;
}

std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// 0-based column slice of a fixed-column record; short lines read as blank.
std::string field(const std::string& line, std::size_t begin, std::size_t end) {
    if (begin >= line.size()) return "";
    return line.substr(begin, std::min(end, line.size()) - begin);
}

double parse_float_field(const std::string& raw, std::size_t line_no, const char* what) {
    const std::string s = strip(raw);
    if (s.empty()) fail("MalformedRecord", std::string("empty ") + what + " field at line " + std::to_string(line_no));
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        fail("MalformedRecord", std::string("non-numeric ") + what + " field at line " + std::to_string(line_no));
    }
    if (pos != s.size())
        fail("MalformedRecord", std::string("non-numeric ") + what + " field at line " + std::to_string(line_no));
    return v;
}

int parse_int_field(const std::string& raw, std::size_t line_no, const char* what) {
    const std::string s = strip(raw);
    if (s.empty()) fail("MalformedRecord", std::string("empty ") + what + " field at line " + std::to_string(line_no));
    std::size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(s, &pos);
    } catch (const std::exception&) {
        fail("MalformedRecord", std::string("non-numeric ") + what + " field at line " + std::to_string(line_no));
    }
    if (pos != s.size())
        fail("MalformedRecord", std::string("non-numeric ") + what + " field at line " + std::to_string(line_no));
    return v;
}

std::string stem_of(const std::string& path) {
    std::size_t slash = path.find_last_of("/\\");
    std::string base = (slash == std::string::npos) ? path : path.substr(slash + 1);
    std::size_t dot = base.find_last_of('.');
    if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
    return base;
}

struct ModelAccum {
    std::vector<RawChain> chains;
    std::map<std::string, std::size_t> chain_index;

    RawChain& chain(const std::string& id) {
        auto it = chain_index.find(id);
        if (it != chain_index.end()) return chains[it->second];
        chain_index.emplace(id, chains.size());
        chains.push_back(RawChain{id, {}});
        return chains.back();
    }
};

} // namespace

const RawAtom* RawResidue::find_atom(const std::string& atom_name) const {
    for (const auto& a : atoms)
        if (a.name == atom_name) return &a;
    return nullptr;
}

const RawChain* Structure::find_chain(const std::string& chain_id) const {
    for (const auto& c : chains)
        if (c.chain_id == chain_id) return &c;
    return nullptr;
}

std::vector<Vec3> BackboneChain::ca() const {
    std::vector<Vec3> out;
    out.reserve(coords.size());
    for (const auto& r : coords) out.push_back(r[1]);
    return out;
}

char three_to_one(const std::string& res_name) {
    auto it = aa_table().find(res_name);
    return it == aa_table().end() ? 'X' : it->second;
}

std::vector<Structure> parse_structures(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoFailure", "cannot open " + path);

    const std::string stem = stem_of(path);
    std::vector<std::pair<int, ModelAccum>> models; // (model number, atoms)
    ModelAccum* cur = nullptr;
    bool saw_model_record = false;
    int cur_model_no = 0;

    auto ensure_model = [&]() -> ModelAccum& {
        if (!cur) {
            models.emplace_back(cur_model_no, ModelAccum{});
            cur = &models.back().second;
        }
        return *cur;
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string rec = field(line, 0, 6);
        if (rec.rfind("MODEL", 0) == 0 && strip(rec) == "MODEL") {
            saw_model_record = true;
            cur_model_no = parse_int_field(field(line, 6, 26), line_no, "model number");
            cur = nullptr;
            ensure_model();
            continue;
        }
        if (rec.rfind("ENDMDL", 0) == 0) {
            cur = nullptr;
            continue;
        }
        if (rec != "ATOM  ") continue; // HETATM, TER, remarks: skipped

        ModelAccum& m = ensure_model();
        const std::string atom_name = strip(field(line, 12, 16));
        const char altloc = line.size() > 16 ? line[16] : ' ';
        const std::string res_name = strip(field(line, 17, 20));
        const std::string chain_id(1, line.size() > 21 ? line[21] : ' ');
        const int res_seq = parse_int_field(field(line, 22, 26), line_no, "residue number");
        const double x = parse_float_field(field(line, 30, 38), line_no, "x");
        const double y = parse_float_field(field(line, 38, 46), line_no, "y");
        const double z = parse_float_field(field(line, 46, 54), line_no, "z");
        const std::string braw = strip(field(line, 60, 66));
        const double b = braw.empty() ? 0.0 : parse_float_field(braw, line_no, "B-factor");

        RawChain& chain = m.chain(chain_id);
        if (chain.residues.empty() || chain.residues.back().number != res_seq
            || chain.residues.back().name != res_name) {
            RawResidue r;
            r.number = res_seq;
            r.name = res_name;
            r.one_letter = three_to_one(res_name);
            chain.residues.push_back(std::move(r));
        }
        RawResidue& res = chain.residues.back();
        if (res.find_atom(atom_name)) {
            // altloc duplicates: keep the first occurrence
            (void)altloc;
            continue;
        }
        res.atoms.push_back(RawAtom{atom_name, Vec3{x, y, z}, b});
    }

    std::vector<Structure> out;
    for (auto& [model_no, acc] : models) {
        bool any_residue = false;
        for (const auto& c : acc.chains)
            if (!c.residues.empty()) any_residue = true;
        if (!any_residue) continue;
        Structure s;
        s.id = saw_model_record ? stem + "_model" + std::to_string(model_no) : stem;
        s.chains = std::move(acc.chains);
        s.source_path = path;
        out.push_back(std::move(s));
    }
    if (out.empty()) fail("NoProteinChains", "no amino-acid ATOM records in " + path);
    return out;
}

Structure parse_structure(const std::string& path) {
    return parse_structures(path).front();
}

ExtractResult extract_backbone(const Structure& s, const std::string& chain_id) {
    const RawChain* chain = s.find_chain(chain_id);
    if (!chain) fail("ChainNotFound", "chain " + chain_id + " not in " + s.id);

    ExtractResult out;
    out.chain.chain_id = chain_id;
    std::vector<double> conf;
    bool any_bfactor = false;

    for (std::size_t i = 0; i < chain->residues.size(); ++i) {
        const RawResidue& r = chain->residues[i];
        const RawAtom* n = r.find_atom("N");
        const RawAtom* ca = r.find_atom("CA");
        const RawAtom* c = r.find_atom("C");
        if (!n || !ca || !c) {
            out.dropped.push_back(i);
            continue;
        }
        out.chain.sequence.push_back(r.one_letter);
        out.chain.coords.push_back({n->xyz, ca->xyz, c->xyz});
        out.chain.residue_numbers.push_back(r.number);
        conf.push_back(ca->bfactor);
        if (ca->bfactor != 0.0) any_bfactor = true;
    }
    if (out.chain.coords.empty())
        fail("EmptyBackbone", "chain " + chain_id + " of " + s.id + " has no complete backbone residue");
    if (any_bfactor) out.chain.confidence = std::move(conf);
    return out;
}

double read_confidence(const BackboneChain& c) {
    if (!c.confidence) fail("MissingConfidence", "chain " + c.chain_id + " carries no confidence values");
    double sum = 0.0;
    for (double v : *c.confidence) sum += v;
    return sum / double(c.confidence->size());
}

void write_backbone_pdb(const BackboneChain& chain, const std::string& path,
                        const std::vector<double>* bfactor) {
    static const std::map<char, std::string> one_to_three = [] {
        std::map<char, std::string> m;
        for (const auto& [three, one] : aa_table()) m[one] = three;
        m['X'] = "UNK";
        return m;
    }();

    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write " + path);

    static const char* atom_names[3] = {"N", "CA", "C"};
    int serial = 1;
    char buf[96];
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto it = one_to_three.find(chain.sequence[i]);
        const std::string& res = it == one_to_three.end() ? one_to_three.at('X') : it->second;
        const double b = bfactor ? (*bfactor)[i]
                                 : (chain.confidence ? (*chain.confidence)[i] : 0.0);
        for (int a = 0; a < 3; ++a) {
            const Vec3& p = chain.coords[i][a];
            std::snprintf(buf, sizeof buf,
                          "ATOM  %5d  %-3s %3s %s%4d    %8.3f%8.3f%8.3f%6.2f%6.2f\n",
                          serial++, atom_names[a], res.c_str(),
                          chain.chain_id.empty() ? "A" : chain.chain_id.substr(0, 1).c_str(),
                          chain.residue_numbers[i], p[0], p[1], p[2], 1.0, b);
            out << buf;
        }
    }
    out << "TER\nEND\n";
}

} // namespace polyfold
