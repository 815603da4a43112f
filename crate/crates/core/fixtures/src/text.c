/* Text handling routines for the corpus fixtures. */
typedef unsigned int u32;
typedef unsigned char u8;

enum tok { T_END, T_NUM, T_IDENT, T_STR, T_PUNCT, T_ERR };

struct lexer {
    const char *p;
    int line;
    char buf[64];
    int len;
    long value;
};

static int is_space(int c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
static int is_alpha(int c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
static int is_digit(int c) { return c >= '0' && c <= '9'; }

int lex_next(struct lexer *lx) {
    while (is_space(*lx->p)) {
        if (*lx->p == '\n') lx->line++;
        lx->p++;
    }
    lx->len = 0;
    char c = *lx->p;
    if (!c) return T_END;
    if (is_digit(c)) {
        long v = 0;
        while (is_digit(*lx->p)) v = v * 10 + (*lx->p++ - '0');
        lx->value = v;
        return T_NUM;
    }
    if (is_alpha(c)) {
        while ((is_alpha(*lx->p) || is_digit(*lx->p)) && lx->len < 63) lx->buf[lx->len++] = *lx->p++;
        lx->buf[lx->len] = 0;
        return T_IDENT;
    }
    if (c == '"') {
        lx->p++;
        while (*lx->p && *lx->p != '"' && lx->len < 63) {
            char ch = *lx->p++;
            if (ch == '\\') {
                switch (*lx->p++) {
                case 'n': ch = '\n'; break;
                case 't': ch = '\t'; break;
                case '0': ch = 0; break;
                default: ch = lx->p[-1];
                }
            }
            lx->buf[lx->len++] = ch;
        }
        if (*lx->p != '"') return T_ERR;
        lx->p++;
        return T_STR;
    }
    lx->buf[0] = *lx->p++;
    lx->len = 1;
    return T_PUNCT;
}

int utf8_decode(const u8 *s, int n, u32 *out) {
    int i = 0, k = 0;
    while (i < n) {
        u32 c = s[i];
        int extra = c < 0x80 ? 0 : c < 0xE0 ? 1 : c < 0xF0 ? 2 : 3;
        if (extra) c &= 0x3F >> extra;
        if (i + extra >= n + (extra ? 0 : 1)) return -1;
        for (int j = 1; j <= extra; j++) {
            if ((s[i + j] & 0xC0) != 0x80) return -1;
            c = (c << 6) | (s[i + j] & 0x3F);
        }
        out[k++] = c;
        i += extra + 1;
    }
    return k;
}

int utf8_encode(const u32 *cp, int n, u8 *out) {
    int k = 0;
    for (int i = 0; i < n; i++) {
        u32 c = cp[i];
        if (c < 0x80) out[k++] = c;
        else if (c < 0x800) { out[k++] = 0xC0 | (c >> 6); out[k++] = 0x80 | (c & 0x3F); }
        else if (c < 0x10000) { out[k++] = 0xE0 | (c >> 12); out[k++] = 0x80 | ((c >> 6) & 0x3F); out[k++] = 0x80 | (c & 0x3F); }
        else { out[k++] = 0xF0 | (c >> 18); out[k++] = 0x80 | ((c >> 12) & 0x3F); out[k++] = 0x80 | ((c >> 6) & 0x3F); out[k++] = 0x80 | (c & 0x3F); }
    }
    return k;
}

int str_len(const char *s) { const char *p = s; while (*p) p++; return p - s; }

char *str_chr(const char *s, int c) {
    for (; *s; s++)
        if (*s == c) return (char *)s;
    return 0;
}

char *str_str(const char *h, const char *n) {
    if (!*n) return (char *)h;
    for (; *h; h++) {
        const char *a = h, *b = n;
        while (*a && *b && *a == *b) { a++; b++; }
        if (!*b) return (char *)h;
    }
    return 0;
}

int split_words(char *s, char **words, int max) {
    int n = 0;
    while (*s && n < max) {
        while (is_space(*s)) *s++ = 0;
        if (!*s) break;
        words[n++] = s;
        while (*s && !is_space(*s)) s++;
    }
    return n;
}

u32 djb2(const char *s) { u32 h = 5381; while (*s) h = h * 33 + (u8)*s++; return h; }

int wildcard(const char *pat, const char *s) {
    const char *star = 0, *ss = s;
    while (*s) {
        if (*pat == '?' || *pat == *s) { pat++; s++; }
        else if (*pat == '*') { star = pat++; ss = s; }
        else if (star) { pat = star + 1; s = ++ss; }
        else return 0;
    }
    while (*pat == '*') pat++;
    return !*pat;
}

int levenshtein(const char *a, const char *b, int *row) {
    int n = str_len(a), m = str_len(b);
    for (int j = 0; j <= m; j++) row[j] = j;
    for (int i = 1; i <= n; i++) {
        int prev = row[0];
        row[0] = i;
        for (int j = 1; j <= m; j++) {
            int cur = row[j];
            int cost = a[i - 1] == b[j - 1] ? 0 : 1;
            int best = prev + cost;
            if (row[j] + 1 < best) best = row[j] + 1;
            if (row[j - 1] + 1 < best) best = row[j - 1] + 1;
            row[j] = best;
            prev = cur;
        }
    }
    return row[m];
}

int format_hex(u32 v, char *out, int upper) {
    const char *digits = upper ? "0123456789ABCDEF" : "0123456789abcdef";
    char tmp[8];
    int n = 0;
    do { tmp[n++] = digits[v & 15]; v >>= 4; } while (v);
    for (int i = 0; i < n; i++) out[i] = tmp[n - 1 - i];
    out[n] = 0;
    return n;
}

int json_skip_value(const char **pp) {
    const char *p = *pp;
    int depth = 0;
    do {
        while (is_space(*p)) p++;
        switch (*p) {
        case '{': case '[': depth++; p++; break;
        case '}': case ']': depth--; p++; break;
        case '"':
            p++;
            while (*p && *p != '"') { if (*p == '\\') p++; p++; }
            if (!*p) return -1;
            p++;
            break;
        case ',': case ':': p++; break;
        case 0: return -1;
        default:
            while (*p && !is_space(*p) && *p != ',' && *p != '}' && *p != ']') p++;
        }
    } while (depth > 0);
    *pp = p;
    return 0;
}

void caesar(char *s, int k) {
    for (; *s; s++) {
        if (*s >= 'a' && *s <= 'z') *s = 'a' + (*s - 'a' + k) % 26;
        else if (*s >= 'A' && *s <= 'Z') *s = 'A' + (*s - 'A' + k) % 26;
    }
}

int count_lines(const char *s) { int n = 1; while (*s) n += *s++ == '\n'; return n; }
