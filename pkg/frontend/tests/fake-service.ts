// In-memory stand-in for the review service, faithful to its endpoint
// contract: items served in ascending qa_id order per inspector, verdicts
// replaced by latest per (inspector, qa), removal threshold of two distinct
// flags, progress computed server-side.

import type { FetchLike } from '../src/api.js';
import type { Criterion, ReviewItem } from '../src/types.js';

export interface FakeVerdict {
    inspector: string;
    qa_id: string;
    flagged: boolean;
    rule: Criterion | null;
    note: string | null;
}

export class FakeReviewService {
    verdicts = new Map<string, FakeVerdict>(); // key inspector:qa
    served = new Map<string, Set<string>>();
    failNextSubmits = 0; // simulate network drops

    constructor(
        public items: ReviewItem[],
        public inspectors: string[],
        public threshold = 2,
    ) {
        this.items = [...items].sort((a, b) => a.qa_id.localeCompare(b.qa_id));
    }

    flagCount(qaId: string): number {
        let count = 0;
        for (const v of this.verdicts.values()) {
            if (v.qa_id === qaId && v.flagged) count += 1;
        }
        return count;
    }

    judged(inspector: string): Set<string> {
        const out = new Set<string>();
        for (const v of this.verdicts.values()) {
            if (v.inspector === inspector) out.add(v.qa_id);
        }
        return out;
    }

    progress() {
        const inspectors: Record<string, { judged: number; pending: number; total: number }> = {};
        for (const inspector of this.inspectors) {
            const judged = this.judged(inspector).size;
            inspectors[inspector] = {
                judged,
                pending: this.items.length - judged,
                total: this.items.length,
            };
        }
        return { total: this.items.length, inspectors };
    }

    /** The paper-mode filter outcome over the current verdicts. */
    removedQaIds(): Set<string> {
        const out = new Set<string>();
        for (const item of this.items) {
            const distinct = new Set<string>();
            for (const v of this.verdicts.values()) {
                if (v.qa_id === item.qa_id && v.flagged) distinct.add(v.inspector);
            }
            if (distinct.size >= this.threshold) out.add(item.qa_id);
        }
        return out;
    }

    fetch: FetchLike = async (input, init) => {
        const url = new URL(input, 'http://fake');
        const path = url.pathname;
        const json = (status: number, body: unknown) =>
            new Response(JSON.stringify(body), {
                status,
                headers: { 'Content-Type': 'application/json' },
            });

        if (path === '/api/review/next') {
            const inspector = url.searchParams.get('inspector') ?? '';
            if (!this.inspectors.includes(inspector)) {
                return json(404, { detail: `unknown inspector '${inspector}'` });
            }
            const judged = this.judged(inspector);
            const next = this.items.find((item) => !judged.has(item.qa_id));
            if (!next) return json(200, { done: true, progress: this.progress() });
            if (!this.served.has(inspector)) this.served.set(inspector, new Set());
            this.served.get(inspector)!.add(next.qa_id);
            return json(200, { ...next, flag_count: this.flagCount(next.qa_id) });
        }

        const verdictMatch = path.match(/^\/api\/review\/(.+)\/verdict$/);
        if (verdictMatch && init?.method === 'POST') {
            if (this.failNextSubmits > 0) {
                this.failNextSubmits -= 1;
                throw new TypeError('network dropped');
            }
            const qaId = decodeURIComponent(verdictMatch[1]);
            const body = JSON.parse(String(init.body)) as FakeVerdict & { inspector: string };
            if (!this.items.some((item) => item.qa_id === qaId)) {
                return json(409, { detail: `unknown qa_id '${qaId}'` });
            }
            if (!this.served.get(body.inspector)?.has(qaId)) {
                return json(409, { detail: 'item was not served to this inspector' });
            }
            this.verdicts.set(`${body.inspector}:${qaId}`, {
                inspector: body.inspector,
                qa_id: qaId,
                flagged: body.flagged,
                rule: body.rule ?? null,
                note: body.note ?? null,
            });
            const count = this.flagCount(qaId);
            return json(200, {
                qa_id: qaId,
                flag_count: count,
                threshold_met: count >= this.threshold,
            });
        }

        if (path === '/api/progress') {
            return json(200, this.progress());
        }
        return json(404, { detail: `no route ${path}` });
    };
}

export function makeItem(qaId: string, overrides: Partial<ReviewItem> = {}): ReviewItem {
    return {
        qa_id: qaId,
        image_id: 1,
        question: `question for ${qaId}?`,
        answer: `target one [SEG] and target two [SEG].`,
        target_labels: ['bus_1', 'bus_2'],
        granularity: 'object',
        auto_violations: [],
        flag_count: 0,
        overlay_url: `/api/review/${qaId}/overlay.png`,
        ...overrides,
    };
}
