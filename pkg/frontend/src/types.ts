// Payload shapes of the review service API. The UI computes no aggregation
// itself; every count shown comes from these responses.

export type Criterion = 'logicality' | 'coherence' | 'clarity';

export const CRITERIA: Criterion[] = ['logicality', 'coherence', 'clarity'];

export const CRITERION_LABELS: Record<Criterion, string> = {
    logicality: 'Logicality and Reasoning',
    coherence: 'Coherence and Relevance',
    clarity: 'Clarity and Precision',
};

export interface AutoViolation {
    qa_id: string;
    rule: Criterion;
    detail: string;
    source: string;
}

export interface ReviewItem {
    qa_id: string;
    image_id: number;
    question: string;
    answer: string;
    target_labels: string[];
    granularity: string;
    auto_violations: AutoViolation[];
    flag_count: number;
    overlay_url: string;
}

export interface DoneResponse {
    done: true;
    progress: Progress;
}

export interface VerdictAck {
    qa_id: string;
    flag_count: number;
    threshold_met: boolean;
}

export interface InspectorProgress {
    judged: number;
    pending: number;
    total: number;
}

export interface Progress {
    total: number;
    inspectors: Record<string, InspectorProgress>;
}

export interface VerdictBody {
    inspector: string;
    flagged: boolean;
    rule?: Criterion | null;
    note?: string | null;
}

export function isDone(r: ReviewItem | DoneResponse): r is DoneResponse {
    return (r as DoneResponse).done === true;
}
