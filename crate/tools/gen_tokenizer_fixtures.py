#!/usr/bin/env python3
"""Generate tokenizer conformance fixtures.

Transcribes the reference mteval-v13a and zh tokenizers (as published in the
standard BLEU scoring tool) and records (input, token list) pairs for a
spread of inputs. The Rust implementations must match these outputs exactly.
"""
import json
import re
import sys

# --- reference regexp tokenizer (language-independent part) ---
_RE = [
    # language-dependent part (assuming Western languages)
    (re.compile(r'([\{-\~\[-\` -\&\(-\+\:-\@\/])'), r' \1 '),
    # tokenize period and comma unless preceded by a digit
    (re.compile(r'([^0-9])([\.,])'), r'\1 \2 '),
    # tokenize period and comma unless followed by a digit
    (re.compile(r'([\.,])([^0-9])'), r' \1 \2'),
    # tokenize dash when preceded by a digit
    (re.compile(r'([0-9])(\-)'), r'\1 \2 '),
]


def tokenize_regex(line):
    for (pat, repl) in _RE:
        line = pat.sub(repl, line)
    return line.split()


def tokenize_13a(line):
    norm = line
    norm = norm.replace('<skipped>', '')
    norm = norm.replace('-\n', '')
    norm = norm.replace('\n', ' ')
    if '&' in norm:
        norm = norm.replace('&quot;', '"')
        norm = norm.replace('&amp;', '&')
        norm = norm.replace('&lt;', '<')
        norm = norm.replace('&gt;', '>')
    return tokenize_regex(' {} '.format(norm))


_CJK_RANGES = [
    (0x3400, 0x4DB5), (0x4E00, 0x9FA5), (0x9FA6, 0x9FBB), (0xF900, 0xFA2D),
    (0xFA30, 0xFA6A), (0xFA70, 0xFAD9), (0x20000, 0x2A6D6), (0x2F800, 0x2FA1D),
    (0xFF00, 0xFFEF), (0x2E80, 0x2EFF), (0x3000, 0x303F), (0x31C0, 0x31EF),
    (0x2F00, 0x2FDF), (0x2FF0, 0x2FFF), (0x3100, 0x312F), (0x31A0, 0x31BF),
    (0xFE10, 0xFE1F), (0xFE30, 0xFE4F), (0x1B000, 0x1B001),
]


def is_cjk(ch):
    cp = ord(ch)
    return any(lo <= cp <= hi for (lo, hi) in _CJK_RANGES)


def tokenize_zh(line):
    line = line.strip()
    out = ''
    for ch in line:
        if is_cjk(ch):
            out += ' ' + ch + ' '
        else:
            out += ch
    return tokenize_regex(out)


SENTENCES = [
    "Hello, world!",
    "3.5",
    "",
    "The quick brown fox jumps over the lazy dog.",
    "I paid $12.50 for 3 apples, 2 pears and 1.5 kg of rice.",
    "Version 2.0.1 was released on 2023-04-01.",
    "He said: \"don't panic\" - and left.",
    "Results improved by 12-15% over the baseline (p<0.05).",
    "A&B; x &lt; y &amp; y &gt; z; he said &quot;ok&quot;.",
    "Text with <skipped>hidden</skipped> markers inside.",
    "hyphen-\nnewline joins; plain\nnewline becomes space.",
    "Parentheses (and [brackets] and {braces}) plus a/slash.",
    "Email me at test@example.com or visit http://example.com/path.",
    "Sentence one. Sentence two! Question three? Exclamation!!",
    "Numbers: 1,234,567.89 and 1000000 and 0.001.",
    "Trailing period at end.",
    ". leading period",
    "comma , surrounded by spaces",
    "multi   space   gaps",
    "tabs\tand\ttabs",
    "semицolons; mixed scripts work too",
    "C'est l'heure de l'apéritif à 18h30.",
    "Die Straße ist naß, sagte er.",
    "¿Dónde está la biblioteca? ¡Aquí!",
    "Пример текста на русском языке, с запятой.",
    "1-2-3 go!",
    "a-b c-d 9-x y-9",
    "50% of 40 is 20; 20% of 50 is 10.",
    "quotes 'single' and \"double\" and `back`.",
    "math: 2+2=4, 7*8=56, 9/3=3",
    "underscores_stay_joined but~tilde splits",
    "mixed 3.5kg and 2,5 and ,start and end,",
    "one.two.three.dots",
    "digits4.5digits and 6,7 pairs",
    "...",
    "a.",
    ".a",
    "5.",
    ".5",
    "5,",
    ",5",
    "猫在垫子上.",
    "GPU加速",
    "我爱机器翻译。",
    "这是一个测试句子，包含标点符号！",
    "中文и English mixed 在一起 with numbers 42 和 3.14。",
    "全形標點：「引號」、（括號）與。句號",
    "深度学习模型需要大量数据。Deep learning needs data.",
    "他说：我不知道。",
    "２０２３年的全形数字",
    "汉字hyphen-case混合",
    "『日本の括弧』も含む文です。",
    "速度提高了3.5倍，准确率达到98.7%。",
    "ｆｕｌｌｗｉｄｔｈ　ｌａｔｉｎ",
    "龥龦龧先秦文字",
    "一二三四五六七八九十",
]


def main():
    out = []
    for s in SENTENCES:
        out.append({
            "text": s,
            "t13a": tokenize_13a(s),
            "zh": tokenize_zh(s),
        })
    path = sys.argv[1] if len(sys.argv) > 1 else "fixtures/tokenizer_conformance.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, ensure_ascii=False, indent=1)
    print(f"wrote {len(out)} cases to {path}")


if __name__ == "__main__":
    main()
