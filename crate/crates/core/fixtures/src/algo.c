/* Assorted routines compiled into the decoder fixtures. */
typedef unsigned int u32;
typedef unsigned char u8;
typedef unsigned long long u64;

static u32 crc_table[256];

void crc32_init(void) {
    for (u32 i = 0; i < 256; i++) {
        u32 c = i;
        for (int k = 0; k < 8; k++)
            c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        crc_table[i] = c;
    }
}

u32 crc32(const u8 *p, u32 n) {
    u32 c = 0xFFFFFFFFu;
    while (n--)
        c = crc_table[(c ^ *p++) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

u32 fnv1a(const char *s) {
    u32 h = 2166136261u;
    while (*s) {
        h ^= (u8)*s++;
        h *= 16777619u;
    }
    return h;
}

void insertion_sort(int *a, int n) {
    for (int i = 1; i < n; i++) {
        int v = a[i], j = i - 1;
        while (j >= 0 && a[j] > v) {
            a[j + 1] = a[j];
            j--;
        }
        a[j + 1] = v;
    }
}

static void swap(int *a, int *b) { int t = *a; *a = *b; *b = t; }

void quick_sort(int *a, int lo, int hi) {
    while (lo < hi) {
        int p = a[(lo + hi) / 2], i = lo, j = hi;
        while (i <= j) {
            while (a[i] < p) i++;
            while (a[j] > p) j--;
            if (i <= j) swap(&a[i++], &a[j--]);
        }
        if (j - lo < hi - i) { quick_sort(a, lo, j); lo = i; }
        else { quick_sort(a, i, hi); hi = j; }
    }
}

int binary_search(const int *a, int n, int key) {
    int lo = 0, hi = n - 1;
    while (lo <= hi) {
        int mid = lo + (hi - lo) / 2;
        if (a[mid] == key) return mid;
        if (a[mid] < key) lo = mid + 1; else hi = mid - 1;
    }
    return -1;
}

void *mem_copy(void *dst, const void *src, u32 n) {
    u8 *d = dst; const u8 *s = src;
    while (n--) *d++ = *s++;
    return dst;
}

void *mem_set(void *dst, int v, u32 n) {
    u8 *d = dst;
    while (n--) *d++ = (u8)v;
    return dst;
}

int str_cmp(const char *a, const char *b) {
    while (*a && *a == *b) { a++; b++; }
    return (u8)*a - (u8)*b;
}

char *str_rev(char *s) {
    char *e = s;
    while (*e) e++;
    for (char *b = s; b < --e; b++) { char t = *b; *b = *e; *e = t; }
    return s;
}

int itoa10(int v, char *out) {
    char buf[12]; int n = 0, neg = v < 0;
    u32 u = neg ? -(u32)v : (u32)v;
    do { buf[n++] = '0' + u % 10; u /= 10; } while (u);
    int k = 0;
    if (neg) out[k++] = '-';
    while (n) out[k++] = buf[--n];
    out[k] = 0;
    return k;
}

u64 mul_mod(u64 a, u64 b, u64 m) {
    u64 r = 0;
    a %= m;
    while (b) {
        if (b & 1) r = (r + a) % m;
        a = (a << 1) % m;
        b >>= 1;
    }
    return r;
}

u64 pow_mod(u64 b, u64 e, u64 m) {
    u64 r = 1;
    while (e) {
        if (e & 1) r = mul_mod(r, b, m);
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    return r;
}

u32 gcd(u32 a, u32 b) { while (b) { u32 t = a % b; a = b; b = t; } return a; }

int popcount_loop(u32 x) { int c = 0; while (x) { x &= x - 1; c++; } return c; }

struct node { int key; struct node *left, *right; };

struct node *bst_insert(struct node *root, struct node *n) {
    struct node **slot = &root;
    while (*slot) slot = n->key < (*slot)->key ? &(*slot)->left : &(*slot)->right;
    *slot = n;
    return root;
}

int bst_height(const struct node *n) {
    if (!n) return 0;
    int l = bst_height(n->left), r = bst_height(n->right);
    return 1 + (l > r ? l : r);
}

enum op { OP_PUSH, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_DUP, OP_SWAP, OP_JZ, OP_JMP, OP_HALT };

int run_vm(const int *code, int *stack) {
    int pc = 0, sp = 0;
    for (;;) {
        switch (code[pc++]) {
        case OP_PUSH: stack[sp++] = code[pc++]; break;
        case OP_ADD: sp--; stack[sp - 1] += stack[sp]; break;
        case OP_SUB: sp--; stack[sp - 1] -= stack[sp]; break;
        case OP_MUL: sp--; stack[sp - 1] *= stack[sp]; break;
        case OP_DIV: sp--; stack[sp - 1] = stack[sp] ? stack[sp - 1] / stack[sp] : 0; break;
        case OP_DUP: stack[sp] = stack[sp - 1]; sp++; break;
        case OP_SWAP: { int t = stack[sp - 1]; stack[sp - 1] = stack[sp - 2]; stack[sp - 2] = t; } break;
        case OP_JZ: { int t = code[pc++]; if (!stack[--sp]) pc = t; } break;
        case OP_JMP: pc = code[pc]; break;
        case OP_HALT: return sp ? stack[sp - 1] : 0;
        default: return -1;
        }
    }
}

double poly_eval(const double *c, int n, double x) {
    double r = 0;
    for (int i = n - 1; i >= 0; i--) r = r * x + c[i];
    return r;
}

double sqrt_newton(double x) {
    if (x <= 0) return 0;
    double g = x;
    for (int i = 0; i < 20; i++) g = 0.5 * (g + x / g);
    return g;
}

float dot(const float *a, const float *b, int n) {
    float s = 0;
    for (int i = 0; i < n; i++) s += a[i] * b[i];
    return s;
}

void matmul(const float *a, const float *b, float *c, int n) {
    for (int i = 0; i < n; i++)
        for (int j = 0; j < n; j++) {
            float s = 0;
            for (int k = 0; k < n; k++) s += a[i * n + k] * b[k * n + j];
            c[i * n + j] = s;
        }
}

void rc4_init(u8 *s, const u8 *key, int len) {
    for (int i = 0; i < 256; i++) s[i] = (u8)i;
    for (int i = 0, j = 0; i < 256; i++) {
        j = (j + s[i] + key[i % len]) & 255;
        u8 t = s[i]; s[i] = s[j]; s[j] = t;
    }
}

void rc4_xor(u8 *s, u8 *buf, int n) {
    int i = 0, j = 0;
    for (int k = 0; k < n; k++) {
        i = (i + 1) & 255;
        j = (j + s[i]) & 255;
        u8 t = s[i]; s[i] = s[j]; s[j] = t;
        buf[k] ^= s[(s[i] + s[j]) & 255];
    }
}

int base64_encode(const u8 *in, int n, char *out) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    int o = 0;
    for (int i = 0; i < n; i += 3) {
        u32 v = in[i] << 16 | (i + 1 < n ? in[i + 1] << 8 : 0) | (i + 2 < n ? in[i + 2] : 0);
        out[o++] = tbl[v >> 18 & 63];
        out[o++] = tbl[v >> 12 & 63];
        out[o++] = i + 1 < n ? tbl[v >> 6 & 63] : '=';
        out[o++] = i + 2 < n ? tbl[v & 63] : '=';
    }
    out[o] = 0;
    return o;
}

struct list { struct list *next; int value; };

struct list *list_reverse(struct list *l) {
    struct list *prev = 0;
    while (l) { struct list *n = l->next; l->next = prev; prev = l; l = n; }
    return prev;
}

int list_sum(const struct list *l) { int s = 0; for (; l; l = l->next) s += l->value; return s; }

u64 fib(int n) { u64 a = 0, b = 1; while (n--) { u64 t = a + b; a = b; b = t; } return a; }

int is_prime(u32 n) {
    if (n < 2) return 0;
    for (u32 d = 2; d * d <= n; d++) if (n % d == 0) return 0;
    return 1;
}

void histogram(const u8 *p, int n, u32 *h) {
    for (int i = 0; i < 256; i++) h[i] = 0;
    for (int i = 0; i < n; i++) h[p[i]]++;
}

int parse_int(const char *s) {
    int sign = 1, v = 0;
    while (*s == ' ' || *s == '\t') s++;
    if (*s == '-') { sign = -1; s++; } else if (*s == '+') s++;
    while (*s >= '0' && *s <= '9') v = v * 10 + (*s++ - '0');
    return sign * v;
}

int to_upper_inplace(char *s) {
    int n = 0;
    for (; *s; s++) if (*s >= 'a' && *s <= 'z') { *s -= 32; n++; }
    return n;
}

long long sat_add(long long a, long long b) {
    long long r = a + b;
    if (a > 0 && b > 0 && r < 0) return 0x7FFFFFFFFFFFFFFFLL;
    if (a < 0 && b < 0 && r >= 0) return -0x7FFFFFFFFFFFFFFFLL - 1;
    return r;
}

void transpose(int *m, int n) {
    for (int i = 0; i < n; i++)
        for (int j = i + 1; j < n; j++) { int t = m[i * n + j]; m[i * n + j] = m[j * n + i]; m[j * n + i] = t; }
}

static volatile int sink;
void spin(int n) { for (int i = 0; i < n; i++) sink += i ^ (i >> 3); }
